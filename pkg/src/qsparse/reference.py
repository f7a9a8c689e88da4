"""Wide-integer dense references used for verification.

These deliberately avoid the tile engine: operands are decoded to plain
int64 arrays and multiplied with numpy, giving an independent route to the
same numbers the kernels must reproduce bit-exactly.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from .attention import AttentionConfig, _fp16_round, quantize
from .qint import PackedMatrix
from .sparse_format import BcrsMatrix, SrBcrsMatrix, bcrs_to_dense, srbcrs_to_dense


def spmm_reference(lhs: SrBcrsMatrix, rhs: PackedMatrix) -> np.ndarray:
    return srbcrs_to_dense(lhs) @ rhs.to_dense()


def sddmm_reference(a: PackedMatrix, b: PackedMatrix, pattern: BcrsMatrix) -> np.ndarray:
    """(A @ B) restricted to the block pattern; absent positions are zero."""
    mask = bcrs_to_dense(pattern) != 0
    return np.where(mask, a.to_dense() @ b.to_dense(), 0)


def attention_reference(q, k, v, cfg: AttentionConfig) -> Dict[str, np.ndarray]:
    """Dense quantized pipeline mirroring the sparse one's rounding steps.

    Returns the integer-stage artifacts (masked dense score ints, quantized
    softmax ints, mix ints) plus the final half-rounded output.
    """
    q_q, p_q = quantize(np.asarray(q), cfg.qkv_bits)
    k_q, p_k = quantize(np.asarray(k), cfg.qkv_bits)
    v_q, p_v = quantize(np.asarray(v), cfg.qkv_bits)
    qi, ki, vi = q_q.to_dense(), k_q.to_dense(), v_q.to_dense()
    mask = bcrs_to_dense(cfg.mask) != 0
    scores_int = np.where(mask, qi @ ki.T, 0)
    alpha = p_q.scale * p_k.scale / np.sqrt(cfg.head_dim)
    scores = _fp16_round(scores_int.astype(np.float64) * alpha)
    probs = np.zeros_like(scores)
    for r in range(cfg.seq_len):
        cols = np.nonzero(mask[r])[0]
        if cols.size == 0:
            continue
        x = scores[r, cols]
        e = np.exp(x - x.max())
        probs[r, cols] = _fp16_round(e / e.sum())
    qmax = (1 << (cfg.softmax_bits - 1)) - 1
    probs_int = np.clip(np.rint(probs / cfg.softmax_scale), -qmax, qmax).astype(np.int64)
    mix_int = probs_int @ vi
    output = _fp16_round(mix_int.astype(np.float64) * (cfg.softmax_scale * p_v.scale))
    return {"scores_int": scores_int, "probs_int": probs_int,
            "mix_int": mix_int, "output": output}
