"""Mixed-precision matrix multiply emulated with native-width tile MMAs.

A wide operand is split into 4- or 8-bit chunks (top chunk signed, lower
chunks unsigned); every chunk pair runs through ordinary tiles and the
partial products recombine with power-of-two weights. Results are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import OverflowRiskError, UnsupportedPrecisionError
from .qint import PackedMatrix, chunk_values
from .tile_engine import (Fragment, INT32_MAX, INT32_MIN, LHS, RHS, TileShape,
                          mma, native_tile)

SPMM = "spmm"
SDDMM = "sddmm"

EMULATED = {
    SPMM: {(16, 16), (16, 8), (16, 4), (12, 4), (8, 4)},
    SDDMM: {(16, 16)},
}
NATIVE = {
    SPMM: {(8, 8), (4, 4)},
    SDDMM: {(8, 8), (4, 4)},
}


def supported_pairs(op_kind: str):
    return sorted(EMULATED[op_kind] | NATIVE[op_kind])


@dataclass(frozen=True)
class EmulationScheme:
    """Decomposition plan for an Lx-Ry precision pair."""

    lhs_bits: int
    rhs_bits: int
    op_kind: str
    native_width: int
    lhs_chunks: int
    rhs_chunks: int
    lhs_signed: Tuple[bool, ...]   # per chunk, top chunk signed
    rhs_signed: Tuple[bool, ...]

    @property
    def tile(self) -> TileShape:
        return native_tile(self.native_width)

    @property
    def native(self) -> bool:
        return self.lhs_chunks == 1 and self.rhs_chunks == 1

    def weight(self, lhs_chunk: int, rhs_chunk: int) -> int:
        return 1 << (self.native_width * (lhs_chunk + rhs_chunk))

    @property
    def weights(self) -> Tuple[int, ...]:
        return tuple(self.weight(i, j)
                     for i in range(self.lhs_chunks) for j in range(self.rhs_chunks))


def plan(lhs_bits: int, rhs_bits: int, op_kind: str = SPMM) -> EmulationScheme:
    """Build the chunking plan for a supported precision pair.

    The native width is the largest of {8, 4} dividing both precisions, so
    the chunk-pair count x/w * y/w is minimal with one tile shape per plan.
    """
    if op_kind not in (SPMM, SDDMM):
        raise ValueError(f"op_kind must be {SPMM!r} or {SDDMM!r}")
    pair = (lhs_bits, rhs_bits)
    if pair not in EMULATED[op_kind] and pair not in NATIVE[op_kind]:
        raise UnsupportedPrecisionError(
            f"L{lhs_bits}-R{rhs_bits} is not supported for {op_kind} "
            f"(supported: {['L%d-R%d' % p for p in supported_pairs(op_kind)]})")
    width = 8 if (lhs_bits % 8 == 0 and rhs_bits % 8 == 0) else 4
    lc, rc = lhs_bits // width, rhs_bits // width
    lhs_signed = tuple(i == lc - 1 for i in range(lc))
    rhs_signed = tuple(j == rc - 1 for j in range(rc))
    return EmulationScheme(lhs_bits, rhs_bits, op_kind, width, lc, rc,
                           lhs_signed, rhs_signed)


def precision_name(lhs_bits: int, rhs_bits: int) -> str:
    return f"L{lhs_bits}-R{rhs_bits}"


def parse_precision(name: str) -> Tuple[int, int]:
    try:
        l, r = name.upper().split("-")
        return int(l.lstrip("L")), int(r.lstrip("R"))
    except Exception:
        raise ValueError(f"precision name must look like 'L8-R4', got {name!r}") from None


@dataclass
class MatmulStats:
    """Instrumentation counters for one emulated multiply."""

    chunk_products: int = 0
    mma_calls: int = 0


def check_accumulation_bound(k: int, chunk_width: int) -> None:
    """Per chunk product, K * max|a| * max|b| must stay inside int32."""
    worst = (1 << chunk_width) - 1
    if k * worst * worst > INT32_MAX:
        raise OverflowRiskError(
            f"reduction size {k} risks int32 overflow for {chunk_width}-bit chunk products")


def _pad_to(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols), dtype=np.int64)
    out[:x.shape[0], :x.shape[1]] = x
    return out


def emulated_matmul(a: PackedMatrix, b: PackedMatrix, scheme: EmulationScheme,
                    stats: Optional[MatmulStats] = None) -> np.ndarray:
    """Exact wide-integer product of two packed matrices via chunked tiles.

    Decomposes both operands at the plan's native width, runs one tile MMA
    per chunk pair and tile position, and recombines the partial products
    with weights 2**(native*(i+j)) in ascending-weight order. The result
    equals the dense wide-integer product bit-exactly and must fit int32.
    """
    if a.bit_width != scheme.lhs_bits or b.bit_width != scheme.rhs_bits:
        raise ValueError("operand bit widths do not match the scheme")
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b.rows}")
    check_accumulation_bound(a.cols, scheme.native_width)
    tile = scheme.tile
    m, k, n = a.rows, a.cols, b.cols
    mt, kt, nt = -(-m // tile.m), -(-k // tile.k), -(-n // tile.n)
    a_chunks = [
        _pad_to(ch.reshape(a.rows, a.cols), mt * tile.m, kt * tile.k)
        for ch in _dense_chunks(a, scheme.native_width)
    ]
    b_chunks = [
        _pad_to(ch.reshape(b.rows, b.cols), kt * tile.k, nt * tile.n)
        for ch in _dense_chunks(b, scheme.native_width)
    ]
    result = np.zeros((mt * tile.m, nt * tile.n), dtype=np.int64)
    pairs = sorted(((i, j) for i in range(scheme.lhs_chunks) for j in range(scheme.rhs_chunks)),
                   key=lambda ij: scheme.weight(*ij))
    for i, j in pairs:
        if stats is not None:
            stats.chunk_products += 1
        weight = scheme.weight(i, j)
        ai, bj = a_chunks[i], b_chunks[j]
        a_sgn, b_sgn = scheme.lhs_signed[i], scheme.rhs_signed[j]
        for ti in range(mt):
            for tj in range(nt):
                acc: Optional[Fragment] = None
                for tk in range(kt):
                    fa = Fragment.from_tile(
                        tile, LHS, ai[ti * tile.m:(ti + 1) * tile.m,
                                     tk * tile.k:(tk + 1) * tile.k], signed=a_sgn)
                    fb = Fragment.from_tile(
                        tile, RHS, bj[tk * tile.k:(tk + 1) * tile.k,
                                      tj * tile.n:(tj + 1) * tile.n], signed=b_sgn)
                    acc = mma(fa, fb, acc)
                    if stats is not None:
                        stats.mma_calls += 1
                result[ti * tile.m:(ti + 1) * tile.m,
                       tj * tile.n:(tj + 1) * tile.n] += weight * acc.to_tile()
    result = result[:m, :n]
    if result.size and (result.min() < INT32_MIN or result.max() > INT32_MAX):
        raise OverflowRiskError("recombined product exceeds int32")
    return result


def _dense_chunks(m: PackedMatrix, chunk_width: int) -> List[np.ndarray]:
    flat = m.to_dense().reshape(-1)
    if m.bit_width == chunk_width:
        return [flat]
    return chunk_values(flat, m.bit_width, chunk_width, signed=m.signed)
