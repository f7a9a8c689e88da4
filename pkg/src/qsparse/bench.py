"""Benchmark harness: deterministic matrix sweeps, oracle verification,
wall-clock timing, and CSV/JSON reporting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import attention, emulation, kernels, reference
from .errors import UnsupportedPrecisionError
from .qint import COL_MAJOR, ROW_MAJOR, pack_dense, signed_range
from .sparse_format import (CsrMatrix, bcrs_to_dense, bcrs_to_srbcrs, dilate,
                            generate_synthetic, shuffle_indices)

DEFAULT_SPARSITIES = (0.5, 0.7, 0.8, 0.9, 0.95, 0.98)
DEFAULT_REPETITIONS = 32

JSON_SCHEMA = "qsparse-bench-v1"


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: the cross product of shapes, sparsities, vector lengths
    and precisions, at one tiling configuration."""

    op: str                                   # spmm | sddmm | attention
    shapes: Sequence[Tuple[int, int, int]]    # (M, N, K); attention: (L, d_k, heads)
    sparsities: Sequence[float] = DEFAULT_SPARSITIES
    vector_lengths: Sequence[int] = (8,)
    precisions: Sequence[str] = ("L8-R8",)
    bs_n: int = 64
    pipeline: bool = False
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = 0
    dlmc: Optional[CsrMatrix] = None          # when set, shapes give N (spmm) / K (sddmm)


@dataclass
class BenchRecord:
    op: str
    m: int
    n: int
    k: int
    vector_length: int
    sparsity: float
    precision: str
    bs_n: int
    pipeline: bool
    repetitions: int
    seed: int
    status: str = "ok"            # ok | skipped
    reason: str = ""
    verified: Optional[bool] = None
    median_s: float = 0.0
    p95_s: float = 0.0
    bytes_lhs: int = 0
    bytes_rhs: int = 0


CSV_COLUMNS = [f.name for f in fields(BenchRecord)]


def safe_magnitudes(lhs_bits: int, rhs_bits: int, k: int, op: str) -> Tuple[int, int]:
    """Value-magnitude caps keeping every 32-bit accumulator in range.

    Caps both sides so the true product fits int32 at reduction size k, and
    the LHS additionally so partially recombined chunk sums (which see
    full-range unsigned RHS chunks) stay in range.
    """
    scheme = emulation.plan(lhs_bits, rhs_bits, op)
    limit = (1 << 31) - 1
    root = int(math.isqrt(limit // max(k, 1)))
    chunk_max = (1 << scheme.native_width) - 1
    mag_l = min(signed_range(lhs_bits)[1], root, limit // (max(k, 1) * chunk_max))
    mag_r = min(signed_range(rhs_bits)[1], root)
    return max(mag_l, 1), max(mag_r, 1)


def _cell_seed(spec: SweepSpec, coords: tuple) -> int:
    # process-independent (unlike hash()) so identical specs regenerate
    # identical matrices across runs
    key = repr((spec.seed,) + coords).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def _build_spmm(spec: SweepSpec, shape, v, sparsity, lhs_bits, rhs_bits, seed):
    m, n, k = shape
    scheme = emulation.plan(lhs_bits, rhs_bits, emulation.SPMM)
    mag_l, mag_r = safe_magnitudes(lhs_bits, rhs_bits, k, emulation.SPMM)
    if spec.dlmc is not None:
        b = dilate(spec.dlmc, v, value_seed=seed, bit_width=lhs_bits, max_magnitude=mag_l)
        m, k = b.scalar_rows, b.scalar_cols
    else:
        b = generate_synthetic(m, k, v, sparsity, seed, bit_width=lhs_bits,
                               max_magnitude=mag_l)
    lhs = bcrs_to_srbcrs(b, scheme.tile.k)
    if rhs_bits == 4:
        lhs = shuffle_indices(lhs)
    rng = np.random.default_rng(seed + 1)
    rhs = pack_dense(rng.integers(-mag_r, mag_r + 1, (k, n)), rhs_bits, ROW_MAJOR)
    cfg = kernels.TilingConfig(bs_n=spec.bs_n, pipeline=spec.pipeline)
    problem = kernels.SpmmProblem(lhs, rhs, cfg)
    return problem, (m, n, k), lhs.nbytes, rhs.nbytes


def _build_sddmm(spec: SweepSpec, shape, v, sparsity, lhs_bits, rhs_bits, seed):
    m, n, k = shape
    mag_l, mag_r = safe_magnitudes(lhs_bits, rhs_bits, k, emulation.SDDMM)
    if spec.dlmc is not None:
        pattern = dilate(spec.dlmc, v, value_seed=seed, bit_width=8)
        m, n = pattern.scalar_rows, pattern.scalar_cols
    else:
        pattern = generate_synthetic(m, n, v, sparsity, seed, bit_width=8)
    rng = np.random.default_rng(seed + 1)
    a = pack_dense(rng.integers(-mag_l, mag_l + 1, (m, k)), lhs_bits, ROW_MAJOR)
    bmat = pack_dense(rng.integers(-mag_r, mag_r + 1, (k, n)), rhs_bits, COL_MAJOR)
    cfg = kernels.TilingConfig(bs_n=spec.bs_n, pipeline=False)
    problem = kernels.SddmmProblem(a, bmat, pattern, config=cfg)
    return problem, (m, n, k), a.nbytes, bmat.nbytes


def _build_attention(spec: SweepSpec, shape, v, sparsity, softmax_bits, qkv_bits, seed):
    seq_len, head_dim, heads = shape
    mask = generate_synthetic(seq_len, seq_len, 8, sparsity, seed, bit_width=8)
    cfg = attention.AttentionConfig(seq_len, softmax_bits, qkv_bits, mask,
                                    head_dim=head_dim, num_heads=heads)
    rng = np.random.default_rng(seed + 1)
    q, k, vmat = (rng.normal(size=(seq_len, head_dim)) for _ in range(3))
    return cfg, (q, k, vmat)


@dataclass
class VerifyOutcome:
    passed: bool
    message: str = ""


def _first_mismatch(got: np.ndarray, want: np.ndarray) -> str:
    diff = np.nonzero(got != want)
    idx = tuple(int(d[0]) for d in diff)
    return (f"first mismatch at {idx}: kernel={got[idx]} oracle={want[idx]}")


def verify(op: str, shape, vector_length: int, sparsity: float, precision: str,
           bs_n: int = 64, pipeline: bool = False, seed: int = 0,
           dlmc: Optional[CsrMatrix] = None, inject_fault: bool = False) -> VerifyOutcome:
    """Run one cell and compare it with the wide-integer dense reference.

    `inject_fault` flips one bit of the kernel output first; it exists as a
    negative control for the harness itself.
    """
    lhs_bits, rhs_bits = emulation.parse_precision(precision)
    spec = SweepSpec(op, [tuple(shape)], [sparsity], [vector_length], [precision],
                     bs_n=bs_n, pipeline=pipeline, seed=seed, dlmc=dlmc)
    cell_seed = _cell_seed(spec, (tuple(shape), vector_length, sparsity, precision))
    if op == "spmm":
        problem, _, _, _ = _build_spmm(spec, shape, vector_length, sparsity,
                                       lhs_bits, rhs_bits, cell_seed)
        got = kernels.spmm(problem)
        want = reference.spmm_reference(problem.lhs, problem.rhs)
    elif op == "sddmm":
        problem, _, _, _ = _build_sddmm(spec, shape, vector_length, sparsity,
                                        lhs_bits, rhs_bits, cell_seed)
        got = bcrs_to_dense(kernels.sddmm(problem))
        want = reference.sddmm_reference(problem.a, problem.b, problem.out_pattern)
    elif op == "attention":
        cfg, (q, k, v) = _build_attention(spec, shape, vector_length, sparsity,
                                          lhs_bits, rhs_bits, cell_seed)
        res = attention.sparse_attention(q, k, v, cfg)
        ref = reference.attention_reference(q, k, v, cfg)
        got = res.mix_int.astype(np.int64)
        want = ref["mix_int"]
        probs_ok = (bcrs_to_dense(res.probs_int) == ref["probs_int"]).all()
        if not probs_ok:
            return VerifyOutcome(False, "quantized softmax stage mismatch")
    else:
        raise ValueError(f"unknown op {op!r}")
    got = np.asarray(got, dtype=np.int64).copy()
    if inject_fault:
        got.flat[got.size // 2] ^= 1
    if (got == want).all():
        return VerifyOutcome(True, "bit-exact")
    return VerifyOutcome(False, _first_mismatch(got, want))


def run_sweep(spec: SweepSpec, verify_cells: bool = True) -> List[BenchRecord]:
    """Execute every cell of the sweep in stable order.

    Matrices are regenerated deterministically per cell seed; infeasible
    precision pairs are recorded as skipped and the run continues. Timing
    covers the kernel call only.
    """
    records: List[BenchRecord] = []
    for shape in spec.shapes:
        for v in spec.vector_lengths:
            for sparsity in spec.sparsities:
                for precision in spec.precisions:
                    records.append(_run_cell(spec, tuple(shape), v, sparsity,
                                             precision, verify_cells))
    return records


def _run_cell(spec: SweepSpec, shape, v, sparsity, precision, verify_cells) -> BenchRecord:
    rec = BenchRecord(spec.op, shape[0], shape[1], shape[2], v, sparsity, precision,
                      spec.bs_n, spec.pipeline, spec.repetitions, spec.seed)
    try:
        lhs_bits, rhs_bits = emulation.parse_precision(precision)
        op_kind = emulation.SDDMM if spec.op == "sddmm" else emulation.SPMM
        if spec.op in ("spmm", "sddmm"):
            emulation.plan(lhs_bits, rhs_bits, op_kind)
    except (UnsupportedPrecisionError, ValueError) as e:
        rec.status, rec.reason = "skipped", str(e)
        return rec
    seed = _cell_seed(spec, (shape, v, sparsity, precision))
    try:
        if spec.op == "spmm":
            problem, dims, rec.bytes_lhs, rec.bytes_rhs = _build_spmm(
                spec, shape, v, sparsity, lhs_bits, rhs_bits, seed)
            rec.m, rec.n, rec.k = dims
            runner = lambda: kernels.spmm(problem)
        elif spec.op == "sddmm":
            problem, dims, rec.bytes_lhs, rec.bytes_rhs = _build_sddmm(
                spec, shape, v, sparsity, lhs_bits, rhs_bits, seed)
            rec.m, rec.n, rec.k = dims
            runner = lambda: kernels.sddmm(problem)
        elif spec.op == "attention":
            cfg, (q, k, vmat) = _build_attention(spec, shape, v, sparsity,
                                                 lhs_bits, rhs_bits, seed)
            runner = lambda: attention.sparse_attention(q, k, vmat, cfg)
        else:
            raise ValueError(f"unknown op {spec.op!r}")
    except (UnsupportedPrecisionError, ValueError) as e:
        rec.status, rec.reason = "skipped", str(e)
        return rec
    times = []
    for _ in range(spec.repetitions):
        t0 = time.perf_counter()
        out = runner()
        times.append(time.perf_counter() - t0)
    rec.median_s = float(np.median(times))
    rec.p95_s = float(np.percentile(times, 95))
    if spec.op == "attention":
        res = out
        rec.bytes_lhs = res.probs_int.nbytes
        rec.bytes_rhs = _attention_rhs_bytes(cfg)
    if verify_cells:
        rec.verified = verify(spec.op, shape, v, sparsity, precision,
                              spec.bs_n, spec.pipeline, spec.seed, spec.dlmc).passed
    return rec


def _attention_rhs_bytes(cfg: attention.AttentionConfig) -> int:
    bits = cfg.qkv_bits
    return (cfg.seq_len * cfg.head_dim * bits + 31) // 32 * 4


def report(records: Sequence[BenchRecord], fmt: str, out_path: str) -> None:
    """Write records with a stable column order (CSV) or versioned schema (JSON)."""
    if fmt == "csv":
        with open(out_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in records:
                w.writerow(asdict(r))
    elif fmt == "json":
        with open(out_path, "w") as f:
            json.dump({"schema": JSON_SCHEMA, "records": [asdict(r) for r in records]},
                      f, indent=2)
    else:
        raise ValueError(f"format must be csv or json, got {fmt!r}")


def load_records(path: str) -> List[BenchRecord]:
    """Parse a JSON report back into records (round-trip support)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema") != JSON_SCHEMA:
        raise ValueError(f"unknown schema {doc.get('schema')!r}")
    return [BenchRecord(**r) for r in doc["records"]]
