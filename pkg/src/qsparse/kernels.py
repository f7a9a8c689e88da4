"""SpMM and SDDMM kernels over the software tile engine.

SpMM multiplies an SR-BCRS left operand by a packed row-major dense right
operand: per output block it walks the row's strides, gathers RHS rows by
column index (sentinels contribute zero), stages them through the padded
shared-memory model, transposes on registers (byte granularity at 8-bit,
nibble-shuffle at 4-bit), and feeds one warp-tile MMA per column tile,
stacking chunk products when the vector length leaves tile rows idle.

SDDMM computes a dense-dense product only at a block-sparse pattern: the
LHS block is staged and shared, the column-major RHS is read directly (its
layout already matches the tile requirement), and each tile covers eight
pattern blocks.

Both kernels are pure functions and bit-exact against wide-integer dense
references; a caller-supplied epilogue may transform the 32-bit
accumulators before the output write.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from . import emulation
from .emulation import EmulationScheme, check_accumulation_bound
from .errors import OverflowRiskError, ShuffleStateError
from .qint import PackedMatrix, ROW_MAJOR, COL_MAJOR, chunk_values
from .sparse_format import (BcrsMatrix, SENTINEL_INDEX, SrBcrsMatrix, bcrs_to_srbcrs)
from .tile_engine import (Fragment, INT32_MAX, INT32_MIN, RHS, StagingLayout,
                          mma, redistribute_stacked, stack_lhs,
                          staging_layout_for, transpose_bytes,
                          transpose_nibbles_via_shuffle)

Epilogue = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TilingConfig:
    """Thread-block tiling: BS_m rows (== V), BS_n output columns, BS_k
    reduction per step (== tile k == format stride), 2 warps by default."""

    bs_n: int = 64
    warps_per_block: int = 2
    pipeline: bool = False
    bs_m: Optional[int] = None   # derived from the problem's vector length
    bs_k: Optional[int] = None   # derived from the precision plan

    def __post_init__(self):
        if self.bs_n not in (64, 128):
            raise ValueError(f"BS_n must be 64 or 128, got {self.bs_n}")
        if self.warps_per_block < 1:
            raise ValueError("need at least one warp per block")


@dataclass(frozen=True)
class SpmmProblem:
    lhs: SrBcrsMatrix
    rhs: PackedMatrix            # row-major K x N
    config: TilingConfig = field(default_factory=TilingConfig)
    epilogue: Optional[Epilogue] = None

    def __post_init__(self):
        if self.rhs.layout != ROW_MAJOR:
            raise ValueError("SpMM RHS must be row-major")
        if self.lhs.scalar_cols != self.rhs.rows:
            raise ValueError(
                f"K mismatch: lhs has {self.lhs.scalar_cols} columns, rhs {self.rhs.rows} rows")
        scheme = self.scheme  # raises UnsupportedPrecisionError for bad pairs
        if self.rhs.bit_width == 4 and not self.lhs.shuffled:
            raise ShuffleStateError("4-bit RHS requires shuffled LHS column indices")
        if self.rhs.bit_width != 4 and self.lhs.shuffled:
            raise ShuffleStateError("shuffled LHS indices are only valid with a 4-bit RHS")
        if self.config.bs_m is not None and self.config.bs_m != self.lhs.vector_length:
            raise ValueError("BS_m must equal the vector length")
        bs_k = scheme.tile.k
        if self.config.bs_k is not None and self.config.bs_k != bs_k:
            raise ValueError(f"BS_k must equal the tile reduction {bs_k}")
        if self.lhs.stride % bs_k:
            raise ValueError(
                f"format stride {self.lhs.stride} must be a multiple of the tile k {bs_k}")

    @property
    def scheme(self) -> EmulationScheme:
        lhs_bits = (self.lhs.values.bit_width if hasattr(self.lhs.values, "bit_width")
                    else 32)
        return emulation.plan(lhs_bits, self.rhs.bit_width, emulation.SPMM)


@dataclass(frozen=True)
class SddmmProblem:
    a: PackedMatrix              # row-major M x K
    b: PackedMatrix              # column-major K x N
    out_pattern: BcrsMatrix      # sparsity structure of the output
    out_format: str = "bcrs"     # "bcrs" | "sr-bcrs"
    config: TilingConfig = field(default_factory=TilingConfig)
    epilogue: Optional[Epilogue] = None

    def __post_init__(self):
        if self.a.layout != ROW_MAJOR:
            raise ValueError("SDDMM A must be row-major")
        if self.b.layout != COL_MAJOR:
            raise ValueError("SDDMM B must be column-major")
        if self.a.cols != self.b.rows:
            raise ValueError(f"K mismatch: {self.a.cols} vs {self.b.rows}")
        if self.out_pattern.scalar_rows != self.a.rows:
            raise ValueError("pattern rows must match A rows")
        if self.out_pattern.scalar_cols != self.b.cols:
            raise ValueError("pattern columns must match B columns")
        if self.out_format not in ("bcrs", "sr-bcrs"):
            raise ValueError("out_format must be 'bcrs' or 'sr-bcrs'")
        _ = self.scheme

    @property
    def scheme(self) -> EmulationScheme:
        return emulation.plan(self.a.bit_width, self.b.bit_width, emulation.SDDMM)


def _chunk_groups(n_chunks: int, vector_length: int, native_width: int):
    """Partition LHS chunk indices into stacked tile groups with their weights."""
    per_group = max(1, 8 // vector_length) if vector_length < 8 else 1
    groups = []
    for base in range(0, n_chunks, per_group):
        idx = list(range(base, min(base + per_group, n_chunks)))
        groups.append((idx, [1 << (native_width * c) for c in idx]))
    return groups


def _stage_words(rows: np.ndarray, width: int, layout: StagingLayout) -> np.ndarray:
    """Pack gathered rows into the padded staging buffer's word array."""
    per_word = 32 // width
    vals = (rows.astype(np.int64) & ((1 << width) - 1)).astype(np.uint64)
    shaped = vals.reshape(rows.shape[0], layout.words_per_row, per_word)
    shifts = np.arange(per_word, dtype=np.uint64) * width
    words = np.bitwise_or.reduce(shaped << shifts, axis=2).astype(np.uint32)
    buf = np.zeros(layout.size, dtype=np.uint32)
    r = np.arange(rows.shape[0])
    base = r * layout.words_per_row + layout.PAD_WORDS * (r // layout.rows_per_group)
    cols = np.arange(layout.words_per_row)
    buf[base[:, None] + cols[None, :]] = words
    return buf


def _lane_load_addresses(layout: StagingLayout, panel: int) -> np.ndarray:
    """(32, rows_per_group) staging addresses each lane reads for its block."""
    lanes = np.arange(32)
    g, t = lanes >> 2, lanes & 3
    steps = np.arange(layout.rows_per_group)
    rows = t[:, None] * layout.rows_per_group + steps[None, :]
    word = 8 * panel + g
    return (rows * layout.words_per_row + word[:, None]
            + layout.PAD_WORDS * (rows // layout.rows_per_group))


class _RhsTilePlan:
    """Per-step register transpose plan of the staged RHS for one precision."""

    def __init__(self, width: int, bs_n: int):
        self.width = width
        self.layout = staging_layout_for(width, bs_n)
        panel_cols = 32 if width == 8 else 64
        self.panels = bs_n // panel_cols
        self.tiles_per_panel = 4 if width == 8 else 8
        self.col_step = 4 if width == 8 else 8     # column spacing between lane groups
        self.panel_cols = panel_cols
        self.addresses = [_lane_load_addresses(self.layout, p) for p in range(self.panels)]

    def fragments(self, staged: np.ndarray, shape, signed: bool,
                  shuffled: bool) -> List[List[Fragment]]:
        """[panel][tile] RHS fragments built from per-lane register transposes."""
        out = []
        for p in range(self.panels):
            words = staged[self.addresses[p]]                    # (32, rows_per_group)
            if self.width == 8:
                transposed = transpose_bytes(words)
            else:
                transposed = transpose_nibbles_via_shuffle(words, shuffled_order=shuffled)
            out.append([Fragment(shape, RHS, transposed[:, m:m + 1].copy(), signed=signed)
                        for m in range(self.tiles_per_panel)])
        return out

    def tile_columns(self, panel: int, tile: int) -> np.ndarray:
        """Global (block-relative) output columns covered by one tile."""
        return panel * self.panel_cols + self.col_step * np.arange(8) + tile


class _SpmmBlock:
    """One thread block's SpMM state: the four pipeline-stage primitives.

    The pipelined and unpipelined drivers issue the same primitives in
    different orders; buffer tags assert the staged dataflow is honored.
    """

    def __init__(self, p: SpmmProblem, scheme: EmulationScheme, rhs_chunks: List[np.ndarray],
                 r: int, col0: int, plan: _RhsTilePlan):
        self.p = p
        self.scheme = scheme
        self.rhs_chunks = rhs_chunks
        self.r = r
        self.col0 = col0
        self.plan = plan
        self.bs_k = scheme.tile.k
        self.v = p.lhs.vector_length
        self.groups = _chunk_groups(scheme.lhs_chunks, self.v, scheme.native_width)
        self.steps = p.lhs.stored_count(r) // self.bs_k
        self.lhs_buf: Dict[int, tuple] = {}
        self.reg_buf: Optional[tuple] = None
        self.shared_buf: Optional[tuple] = None
        self.acc: Dict[tuple, Fragment] = {}

    def load_lhs(self, i: int):
        """Stride sub-block i of LHS values and indices into shared memory."""
        sub = self.p.lhs.stride // self.bs_k
        idx, vals = self.p.lhs.stride_block(self.r, i // sub)
        off = (i % sub) * self.bs_k
        idx = idx[off:off + self.bs_k]
        vals = vals[:, off:off + self.bs_k]
        chunks = (chunk_values(vals, self.scheme.lhs_bits, self.scheme.native_width)
                  if self.scheme.lhs_chunks > 1 else [vals])
        self.lhs_buf[i % 2] = (i, idx, chunks)

    def prefetch_rhs(self, i: int):
        """Gather RHS rows for step i into registers using the loaded indices."""
        tag, idx, _ = self.lhs_buf[i % 2]
        assert tag == i, "prefetch consumed a stale LHS buffer"
        bs_n = self.p.config.bs_n
        gathered = []
        for dense in self.rhs_chunks:
            rows = np.zeros((self.bs_k, bs_n), dtype=np.int64)
            valid = idx != SENTINEL_INDEX
            take = dense[idx[valid].astype(np.int64), self.col0:self.col0 + bs_n]
            rows[valid, :take.shape[1]] = take
            gathered.append(rows)
        self.reg_buf = (i, gathered)

    def store_rhs(self, i: int):
        """Stage prefetched registers into the padded shared buffer."""
        tag, gathered = self.reg_buf
        assert tag == i, "store consumed a stale register buffer"
        width = self.scheme.native_width
        self.shared_buf = (i, [_stage_words(rows, width, self.plan.layout)
                               for rows in gathered])

    def compute(self, i: int):
        """Register transpose + tile MMAs for step i, accumulating fragments."""
        tag, idx, lhs_parts = self.lhs_buf[i % 2]
        assert tag == i, "compute consumed a stale LHS buffer"
        stag, staged = self.shared_buf
        assert stag == i, "compute consumed a stale staging buffer"
        shape = self.scheme.tile
        shuffled = self.p.lhs.shuffled
        for j, buf in enumerate(staged):
            rhs_frags = self.plan.fragments(buf, shape, self.scheme.rhs_signed[j], shuffled)
            for gi, (chunk_idx, _) in enumerate(self.groups):
                parts = [lhs_parts[c] for c in chunk_idx]
                signed = [self.scheme.lhs_signed[c] for c in chunk_idx]
                lhs_frag = stack_lhs(parts, signed, shape)
                for panel in range(self.plan.panels):
                    for m in range(self.plan.tiles_per_panel):
                        key = (gi, j, panel, m)
                        self.acc[key] = mma(lhs_frag, rhs_frags[panel][m], self.acc.get(key))

    def result(self) -> np.ndarray:
        """Redistribute stacked accumulators and assemble the V x BS_n block."""
        bs_n = self.p.config.bs_n
        out = np.zeros((self.v, bs_n), dtype=np.int64)
        for (gi, j, panel, m), frag in sorted(self.acc.items()):
            _, weights = self.groups[gi]
            combined = redistribute_stacked(frag, self.v, weights)
            tile = combined.to_tile()[:self.v]
            cols = self.plan.tile_columns(panel, m)
            out[:, cols] += (1 << (self.scheme.native_width * j)) * tile
        return out


def _rhs_dense_chunks(rhs: PackedMatrix, scheme: EmulationScheme) -> List[np.ndarray]:
    dense = rhs.to_dense()
    if scheme.rhs_chunks == 1:
        return [dense]
    return [c.reshape(dense.shape)
            for c in chunk_values(dense.reshape(-1), scheme.rhs_bits, scheme.native_width)]


def _finalize_dense(acc: np.ndarray, epilogue: Optional[Epilogue]) -> np.ndarray:
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise OverflowRiskError("SpMM output exceeds int32")
    out = acc.astype(np.int32)
    return epilogue(out) if epilogue is not None else out


def spmm(p: SpmmProblem) -> np.ndarray:
    """Dense M x N product of the sparse LHS and dense RHS, bit-exact."""
    if p.config.pipeline:
        out, _ = spmm_pipelined(p)
        return out
    return _spmm_run(p, pipelined=False)[0]


def spmm_pipelined(p: SpmmProblem):
    """SpMM with the prefetch pipeline; returns (output, per-block traces).

    Each trace lists the stage events of one thread block in issue order:
    a cold start (load_lhs, sync, prefetch_rhs), a steady-state loop that
    overlaps each step's RHS prefetch with the previous step's compute, and
    a drain. Results are identical to the unpipelined path.
    """
    if not p.config.pipeline:
        raise ValueError("pipeline is off in this configuration")
    return _spmm_run(p, pipelined=True)


def _spmm_run(p: SpmmProblem, pipelined: bool):
    scheme = p.scheme
    check_accumulation_bound(p.lhs.scalar_cols, scheme.native_width)
    rhs_chunks = _rhs_dense_chunks(p.rhs, scheme)
    plan = _RhsTilePlan(scheme.native_width, p.config.bs_n)
    m, n = p.lhs.scalar_rows, p.rhs.cols
    bs_n = p.config.bs_n
    acc = np.zeros((m, n), dtype=np.int64)
    traces = []
    for r in range(p.lhs.vector_rows):
        for col0 in range(0, n, bs_n):
            block = _SpmmBlock(p, scheme, rhs_chunks, r, col0, plan)
            if block.steps == 0:
                continue
            if pipelined:
                traces.append(((r, col0 // bs_n), _run_pipeline(block)))
            else:
                for i in range(block.steps):
                    block.load_lhs(i)
                    block.prefetch_rhs(i)
                    block.store_rhs(i)
                    block.compute(i)
            v = p.lhs.vector_length
            width = min(bs_n, n - col0)
            acc[r * v:(r + 1) * v, col0:col0 + width] += block.result()[:, :width]
    out = _finalize_dense(acc, p.epilogue)
    return out, traces


def _run_pipeline(block: _SpmmBlock) -> List[tuple]:
    """Drive one block per the prefetch pipeline's stage ordering."""
    trace: List[tuple] = []

    def ev(name, *args):
        trace.append((name, *args))

    steps = block.steps
    ev("load_lhs", 0); block.load_lhs(0)
    ev("sync")
    ev("prefetch_rhs", 0); block.prefetch_rhs(0)
    for i in range(1, steps):
        ev("store_rhs", i - 1); block.store_rhs(i - 1)
        ev("load_lhs", i); block.load_lhs(i)
        ev("sync")
        ev("prefetch_rhs", i); block.prefetch_rhs(i)
        ev("mma", i - 1); block.compute(i - 1)
        ev("sync")
    ev("store_rhs", steps - 1); block.store_rhs(steps - 1)
    ev("sync")
    ev("mma", steps - 1); block.compute(steps - 1)
    return trace


def sddmm(p: SddmmProblem) -> Union[BcrsMatrix, SrBcrsMatrix]:
    """Dense-dense product sampled at the block pattern.

    Pattern block (vector row r, column c) receives rows r*V..r*V+V-1 of A
    times column c of B; tiles cover eight pattern blocks at a time, warps
    round-robin over them. Output lands in BCRS or SR-BCRS per out_format.
    """
    scheme = p.scheme
    check_accumulation_bound(p.a.cols, scheme.native_width)
    tile_shape = scheme.tile
    bs_k = tile_shape.k
    k_pad = -(-p.a.cols // bs_k) * bs_k
    a_dense = np.zeros((p.a.rows, k_pad), dtype=np.int64)
    a_dense[:, :p.a.cols] = p.a.to_dense()
    b_dense = np.zeros((k_pad, p.b.cols), dtype=np.int64)
    b_dense[:p.b.rows] = p.b.to_dense()
    a_chunks = ([a_dense] if scheme.lhs_chunks == 1 else
                [c.reshape(a_dense.shape)
                 for c in chunk_values(a_dense.reshape(-1), scheme.lhs_bits,
                                       scheme.native_width)])
    b_chunks = ([b_dense] if scheme.rhs_chunks == 1 else
                [c.reshape(b_dense.shape)
                 for c in chunk_values(b_dense.reshape(-1), scheme.rhs_bits,
                                       scheme.native_width)])
    pat = p.out_pattern
    v = pat.vector_length
    groups = _chunk_groups(scheme.lhs_chunks, v, scheme.native_width)
    steps = k_pad // bs_k
    values = np.zeros(pat.n_blocks * v, dtype=np.int64)
    for r in range(pat.vector_rows):
        lo, hi = int(pat.row_offsets[r]), int(pat.row_offsets[r + 1])
        if hi == lo:
            continue
        cols = pat.col_indices[lo:hi].astype(np.int64)
        # stage the A block once per row; it is shared across all tiles
        a_block = [c[r * v:(r + 1) * v] for c in a_chunks]
        for t0 in range(0, cols.size, 8):
            sel = cols[t0:t0 + 8]
            b_tile_cols = np.zeros((k_pad, 8), dtype=np.int64)
            acc: Dict[tuple, Fragment] = {}
            for j, bc in enumerate(b_chunks):
                b_tile_cols[:, :sel.size] = bc[:, sel]
                for i in range(steps):
                    fb = Fragment.from_tile(tile_shape, RHS,
                                            b_tile_cols[i * bs_k:(i + 1) * bs_k],
                                            signed=scheme.rhs_signed[j])
                    for gi, (chunk_idx, _) in enumerate(groups):
                        parts = [a_block[c][:, i * bs_k:(i + 1) * bs_k] for c in chunk_idx]
                        signed = [scheme.lhs_signed[c] for c in chunk_idx]
                        fa = stack_lhs(parts, signed, tile_shape)
                        acc[(gi, j)] = mma(fa, fb, acc.get((gi, j)))
            block_out = np.zeros((v, 8), dtype=np.int64)
            for (gi, j), frag in sorted(acc.items()):
                _, weights = groups[gi]
                combined = redistribute_stacked(frag, v, weights)
                block_out += (1 << (scheme.native_width * j)) * combined.to_tile()[:v]
            for bi in range(sel.size):
                blk = lo + t0 + bi
                values[blk * v:(blk + 1) * v] = block_out[:, bi]
    if values.size and (values.min() < INT32_MIN or values.max() > INT32_MAX):
        raise OverflowRiskError("SDDMM output exceeds int32")
    out_values: np.ndarray = values.astype(np.int32)
    if p.epilogue is not None:
        out_values = p.epilogue(out_values)
    out = BcrsMatrix(pat.scalar_rows, pat.scalar_cols, v,
                     pat.row_offsets.copy(), pat.col_indices.copy(), out_values)
    if p.out_format == "sr-bcrs":
        return bcrs_to_srbcrs(out, bs_k)
    return out
