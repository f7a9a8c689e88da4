"""Quantized sparse self-attention pipeline.

softmax(Q K^T ⊙ M / sqrt(d_k)) V with a block-sparse mask: Q, K, V are
quantized symmetrically, the masked score matrix comes from a quantized
SDDMM with dequantization fused into its epilogue, softmax runs in wide
real arithmetic with half-precision-rounded inputs and outputs and fuses
the requantization of its result, and the final mix is a quantized SpMM
with fused dequantization.

Integer stages are bit-exact against a dense reference applying the same
rounding pipeline; an all-masked row contributes zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import emulation, kernels
from .errors import UnsupportedPrecisionError
from .qint import COL_MAJOR, PackedArray, PackedMatrix, ROW_MAJOR, pack_dense
from .sparse_format import BcrsMatrix, bcrs_to_srbcrs, shuffle_indices

SUPPORTED_PRECISIONS = ((16, 8), (8, 8), (8, 4))  # (softmax_bits, qkv_bits)

MASK_VECTOR_LENGTH = 8


@dataclass(frozen=True)
class QuantizationParams:
    """Symmetric per-tensor scale: x ≈ scale * q with q in ±(2^(b-1)-1)."""

    scale: float
    bit_width: int
    signed: bool = True


def quantize(x, bits: int, calibration: str = "absmax",
             layout: str = ROW_MAJOR) -> Tuple[PackedMatrix, QuantizationParams]:
    """Symmetric absmax quantization to signed `bits`-bit integers.

    scale = absmax / (2^(bits-1) - 1), zero maps to zero, rounding is
    to nearest with ties to even; an all-zero input gets scale 1.
    """
    if calibration != "absmax":
        raise ValueError(f"unknown calibration {calibration!r}")
    arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("input must be finite")
    qmax = (1 << (bits - 1)) - 1
    absmax = float(np.abs(arr).max()) if arr.size else 0.0
    scale = absmax / qmax if absmax > 0 else 1.0
    q = np.clip(np.rint(arr / scale), -qmax, qmax).astype(np.int64)
    return pack_dense(q, bits, layout), QuantizationParams(scale, bits)


def dequantize(q, params: QuantizationParams) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * params.scale


def _fp16_round(x: np.ndarray) -> np.ndarray:
    """Round to the nearest half-precision-representable value (kept in f64)."""
    return np.asarray(x, dtype=np.float64).astype(np.float16).astype(np.float64)


@dataclass(frozen=True)
class AttentionConfig:
    seq_len: int
    softmax_bits: int
    qkv_bits: int
    mask: BcrsMatrix
    head_dim: int = 64
    num_heads: int = 1

    def __post_init__(self):
        if self.seq_len % MASK_VECTOR_LENGTH:
            raise ValueError(f"sequence length must be a multiple of {MASK_VECTOR_LENGTH}")
        if (self.softmax_bits, self.qkv_bits) not in SUPPORTED_PRECISIONS:
            names = [f"{a}b-{b}b" for a, b in SUPPORTED_PRECISIONS]
            raise UnsupportedPrecisionError(
                f"{self.softmax_bits}b-{self.qkv_bits}b not in supported set {names}")
        if self.mask.vector_length != MASK_VECTOR_LENGTH:
            raise ValueError("attention mask must use 8x1 blocks")
        if self.mask.scalar_rows != self.seq_len or self.mask.scalar_cols != self.seq_len:
            raise ValueError("mask must be seq_len x seq_len")

    @property
    def softmax_scale(self) -> float:
        """Fixed output scale of the softmax quantizer (probabilities lie in [0, 1])."""
        return 1.0 / ((1 << (self.softmax_bits - 1)) - 1)


@dataclass(frozen=True)
class AttentionResult:
    """Final mix plus the integer-stage artifacts for exactness checks."""

    output: np.ndarray            # (L, d_k) half-precision-rounded reals
    scores_int: np.ndarray        # SDDMM int32 accumulators, block-major
    scores: BcrsMatrix            # dequantized scores (fp16-rounded)
    probs: BcrsMatrix             # softmax output before quantization
    probs_int: BcrsMatrix         # quantized softmax, block-major values
    mix_int: np.ndarray           # SpMM int32 accumulators (L, d_k)
    params: Dict[str, QuantizationParams]


def _row_softmax(scores: BcrsMatrix) -> BcrsMatrix:
    """Row-wise softmax over the stored (valid) entries only.

    Inputs are already half-precision-rounded; the exponentials and the
    normalizing sum run in float64 and the outputs are rounded back to
    half-precision values. Rows with no stored blocks stay absent (zero).
    """
    v = scores.vector_length
    vals = np.asarray(scores._flat_values, dtype=np.float64)
    out = np.zeros_like(vals)
    for r in range(scores.vector_rows):
        lo, hi = int(scores.row_offsets[r]), int(scores.row_offsets[r + 1])
        if hi == lo:
            continue
        rows = vals[lo * v:hi * v].reshape(hi - lo, v).T   # (V, blocks), column-sorted
        shifted = np.exp(rows - rows.max(axis=1, keepdims=True))
        probs = _fp16_round(shifted / shifted.sum(axis=1, keepdims=True))
        out[lo * v:hi * v] = probs.T.reshape(-1)
    return BcrsMatrix(scores.scalar_rows, scores.scalar_cols, v,
                      scores.row_offsets.copy(), scores.col_indices.copy(), out)


def sparse_attention(q, k, v, cfg: AttentionConfig) -> AttentionResult:
    """Run the quantized sparse attention pipeline for one head."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ld = (cfg.seq_len, cfg.head_dim)
    if q.shape != ld or k.shape != ld or v.shape != ld:
        raise ValueError(f"Q, K, V must be {ld}")

    q_q, p_q = quantize(q, cfg.qkv_bits)
    k_q, p_k = quantize(k, cfg.qkv_bits)
    v_q, p_v = quantize(v, cfg.qkv_bits)
    # K^T in column-major shares K's row-major words: metadata flip only.
    kt_q = PackedMatrix(cfg.head_dim, cfg.seq_len, k_q.bit_width, COL_MAJOR,
                        k_q.signed, k_q.words)

    captured: Dict[str, np.ndarray] = {}
    score_alpha = p_q.scale * p_k.scale / np.sqrt(cfg.head_dim)

    def dequant_scores(acc: np.ndarray) -> np.ndarray:
        captured["scores_int"] = acc.copy()
        return _fp16_round(acc.astype(np.float64) * score_alpha)

    scores = kernels.sddmm(kernels.SddmmProblem(
        q_q, kt_q, cfg.mask, out_format="bcrs", epilogue=dequant_scores))

    probs = _row_softmax(scores)
    qmax = (1 << (cfg.softmax_bits - 1)) - 1
    probs_q = np.clip(np.rint(np.asarray(probs._flat_values) / cfg.softmax_scale),
                      -qmax, qmax).astype(np.int64)
    probs_int = BcrsMatrix(probs.scalar_rows, probs.scalar_cols, probs.vector_length,
                           probs.row_offsets.copy(), probs.col_indices.copy(),
                           PackedArray.from_values(probs_q, cfg.softmax_bits, signed=True))

    mix_scheme = emulation.plan(cfg.softmax_bits, cfg.qkv_bits, emulation.SPMM)
    weights_sr = bcrs_to_srbcrs(probs_int, mix_scheme.tile.k)
    if cfg.qkv_bits == 4:
        weights_sr = shuffle_indices(weights_sr)

    mix_alpha = cfg.softmax_scale * p_v.scale

    def dequant_mix(acc: np.ndarray) -> np.ndarray:
        captured["mix_int"] = acc.copy()
        return _fp16_round(acc.astype(np.float64) * mix_alpha)

    output = kernels.spmm(kernels.SpmmProblem(
        weights_sr, v_q, kernels.TilingConfig(bs_n=64), epilogue=dequant_mix))

    return AttentionResult(
        output=output,
        scores_int=captured["scores_int"],
        scores=scores,
        probs=probs,
        probs_int=probs_int,
        mix_int=captured["mix_int"],
        params={"q": p_q, "k": p_k, "v": p_v,
                "softmax": QuantizationParams(cfg.softmax_scale, cfg.softmax_bits)},
    )


def multi_head_attention(q, k, v, cfg: AttentionConfig) -> np.ndarray:
    """Independent per-head pipeline invocations over (heads, L, d_k) inputs."""
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    expect = (cfg.num_heads, cfg.seq_len, cfg.head_dim)
    if q.shape != expect:
        raise ValueError(f"expected stacked heads of shape {expect}")
    return np.stack([sparse_attention(q[h], k[h], v[h], cfg).output
                     for h in range(cfg.num_heads)])
