"""Bit-packed low-precision integer storage and two's-complement chunk arithmetic.

Values are packed in element order (row- or column-major), least-significant
bits first within each 32-bit word. 12-bit values straddle word boundaries;
4/8/16-bit values never do. All splits/recombinations are exact two's
complement with no saturation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

SUPPORTED_BIT_WIDTHS = (4, 8, 12, 16)

ROW_MAJOR = "row-major"
COL_MAJOR = "column-major"


def signed_range(bit_width: int) -> tuple[int, int]:
    return -(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1


def unsigned_range(bit_width: int) -> tuple[int, int]:
    return 0, (1 << bit_width) - 1


def _check_range(values: np.ndarray, bit_width: int, signed: bool) -> None:
    lo, hi = signed_range(bit_width) if signed else unsigned_range(bit_width)
    bad = np.nonzero((values < lo) | (values > hi))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"value {int(values[i])} at index {i} out of "
            f"{'signed' if signed else 'unsigned'} {bit_width}-bit range [{lo}, {hi}]"
        )


def pack_values(values: Sequence[int] | np.ndarray, bit_width: int, signed: bool = True) -> np.ndarray:
    """Pack integers into uint32 words, LSB-first; trailing bits stay zero."""
    if bit_width not in SUPPORTED_BIT_WIDTHS:
        raise ValueError(f"bit_width must be one of {SUPPORTED_BIT_WIDTHS}, got {bit_width}")
    vals = np.asarray(values, dtype=np.int64).ravel()
    _check_range(vals, bit_width, signed)
    n = vals.size
    n_words = (n * bit_width + 31) // 32
    words = np.zeros(n_words, dtype=np.uint32)
    if n == 0:
        return words
    raw = (vals & ((1 << bit_width) - 1)).astype(np.uint64)
    off = np.arange(n, dtype=np.int64) * bit_width
    w0 = off >> 5
    sh = (off & 31).astype(np.uint64)
    lo = ((raw << sh) & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    np.bitwise_or.at(words, w0, lo)
    straddle = (sh.astype(np.int64) + bit_width) > 32
    if straddle.any():
        hi = (raw[straddle] >> (np.uint64(32) - sh[straddle])).astype(np.uint32)
        np.bitwise_or.at(words, w0[straddle] + 1, hi)
    return words


def unpack_values(words: np.ndarray, count: int, bit_width: int, signed: bool = True) -> np.ndarray:
    """Inverse of pack_values; returns int64 values, sign-extended if signed."""
    if bit_width not in SUPPORTED_BIT_WIDTHS:
        raise ValueError(f"bit_width must be one of {SUPPORTED_BIT_WIDTHS}, got {bit_width}")
    w = np.asarray(words, dtype=np.uint32).astype(np.uint64)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    off = np.arange(count, dtype=np.int64) * bit_width
    w0 = off >> 5
    sh = (off & 31).astype(np.uint64)
    v = w[w0] >> sh
    straddle = (sh.astype(np.int64) + bit_width) > 32
    if straddle.any():
        v[straddle] |= w[w0[straddle] + 1] << (np.uint64(32) - sh[straddle])
    v = (v & np.uint64((1 << bit_width) - 1)).astype(np.int64)
    if signed:
        v -= (v >> (bit_width - 1)) << bit_width
    return v


@dataclass(frozen=True)
class PackedArray:
    """Flat packed integer array: the storage unit behind matrices and sparse values."""

    count: int
    bit_width: int
    signed: bool
    words: np.ndarray  # uint32, LSB-first packing

    @classmethod
    def from_values(cls, values, bit_width: int, signed: bool = True) -> "PackedArray":
        vals = np.asarray(values, dtype=np.int64).ravel()
        return cls(vals.size, bit_width, signed, pack_values(vals, bit_width, signed))

    def to_values(self) -> np.ndarray:
        return unpack_values(self.words, self.count, self.bit_width, self.signed)

    @property
    def nbytes(self) -> int:
        return int(self.words.nbytes)

    def __len__(self) -> int:
        return self.count


@dataclass(frozen=True)
class PackedMatrix:
    """Dense matrix of b-bit integers packed into uint32 words in element order."""

    rows: int
    cols: int
    bit_width: int
    layout: str  # ROW_MAJOR or COL_MAJOR
    signed: bool
    words: np.ndarray

    def __post_init__(self):
        if self.layout not in (ROW_MAJOR, COL_MAJOR):
            raise ValueError(f"layout must be {ROW_MAJOR!r} or {COL_MAJOR!r}")
        expected = (self.rows * self.cols * self.bit_width + 31) // 32
        if len(self.words) != expected:
            raise ValueError(f"expected {expected} words, got {len(self.words)}")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def nbytes(self) -> int:
        return int(self.words.nbytes)

    def get(self, r: int, c: int) -> int:
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError(f"({r}, {c}) outside {self.rows}x{self.cols}")
        idx = r * self.cols + c if self.layout == ROW_MAJOR else c * self.rows + r
        return int(unpack_values(self.words, self.count, self.bit_width, self.signed)[idx])

    def to_dense(self) -> np.ndarray:
        """Unpack to a 2-D int64 array indexed [row, col]."""
        flat = unpack_values(self.words, self.count, self.bit_width, self.signed)
        if self.layout == ROW_MAJOR:
            return flat.reshape(self.rows, self.cols)
        return flat.reshape(self.cols, self.rows).T


def pack(values, bit_width: int, layout: str, rows: int, cols: int, signed: bool = True) -> PackedMatrix:
    """Pack a flat value sequence (in the declared layout's element order)."""
    vals = np.asarray(values, dtype=np.int64).ravel()
    if vals.size != rows * cols:
        raise ValueError(f"expected {rows * cols} values, got {vals.size}")
    return PackedMatrix(rows, cols, bit_width, layout, signed, pack_values(vals, bit_width, signed))


def pack_dense(dense, bit_width: int, layout: str = ROW_MAJOR, signed: bool = True) -> PackedMatrix:
    """Pack a 2-D array indexed [row, col] into the requested layout."""
    d = np.asarray(dense, dtype=np.int64)
    if d.ndim != 2:
        raise ValueError("expected a 2-D array")
    flat = d.ravel() if layout == ROW_MAJOR else d.T.ravel()
    return pack(flat, bit_width, layout, d.shape[0], d.shape[1], signed)


def unpack(m: PackedMatrix) -> np.ndarray:
    """Flat sign-extended values in the matrix's element order."""
    return unpack_values(m.words, m.count, m.bit_width, m.signed)


@dataclass(frozen=True)
class ChunkDecomposition:
    """A value written as sum(chunks[i] * 2**(chunk_width*i)), top chunk signed iff top_signed."""

    chunk_width: int
    chunk_count: int
    chunks: tuple
    top_signed: bool

    def recombine(self) -> int:
        return sum(int(c) << (self.chunk_width * i) for i, c in enumerate(self.chunks))


def split_unsigned(v: int, chunk_width: int, chunk_count: int) -> ChunkDecomposition:
    """Split an unsigned value into unsigned chunks, least significant first."""
    if not 0 <= v < (1 << (chunk_width * chunk_count)):
        raise ValueError(f"{v} out of unsigned {chunk_width * chunk_count}-bit range")
    mask = (1 << chunk_width) - 1
    chunks = tuple((v >> (chunk_width * i)) & mask for i in range(chunk_count))
    return ChunkDecomposition(chunk_width, chunk_count, chunks, top_signed=False)


def split_signed(v: int, chunk_width: int, chunk_count: int) -> ChunkDecomposition:
    """Split a signed value; lower chunks unsigned, top chunk signed two's complement."""
    total = chunk_width * chunk_count
    lo, hi = signed_range(total)
    if not lo <= v <= hi:
        raise ValueError(f"{v} out of signed {total}-bit range [{lo}, {hi}]")
    mask = (1 << chunk_width) - 1
    chunks = [(v >> (chunk_width * i)) & mask for i in range(chunk_count)]
    top = chunks[-1]
    if top >= 1 << (chunk_width - 1):
        top -= 1 << chunk_width
    chunks[-1] = top
    return ChunkDecomposition(chunk_width, chunk_count, tuple(chunks), top_signed=True)


def chunk_values(values: np.ndarray, source_bits: int, chunk_width: int,
                 signed: bool = True) -> List[np.ndarray]:
    """Vectorized chunk split of an int64 array; returns one array per chunk.

    Lower chunks come back in [0, 2**chunk_width); the top chunk is signed
    two's complement when `signed`, unsigned otherwise.
    """
    if source_bits % chunk_width:
        raise ValueError(f"{source_bits}-bit values not divisible into {chunk_width}-bit chunks")
    n_chunks = source_bits // chunk_width
    vals = np.asarray(values, dtype=np.int64)
    mask = (1 << chunk_width) - 1
    out = [(vals >> (chunk_width * i)) & mask for i in range(n_chunks)]
    if signed:
        top = out[-1]
        out[-1] = top - ((top >> (chunk_width - 1)) << chunk_width)
    return out


def decompose_matrix(m: PackedMatrix, chunk_width: int) -> List[PackedMatrix]:
    """Decompose a signed packed matrix into chunk matrices at chunk_width precision.

    Element-wise recombination with weights 2**(chunk_width*i) reproduces the
    source exactly; all chunk matrices but the last are unsigned.
    """
    if not m.signed:
        raise ValueError("decompose_matrix expects a signed matrix")
    if m.bit_width % chunk_width:
        raise ValueError(f"{m.bit_width}-bit matrix not divisible into {chunk_width}-bit chunks")
    parts = chunk_values(unpack(m), m.bit_width, chunk_width)
    out = []
    for i, vals in enumerate(parts):
        is_top = i == len(parts) - 1
        out.append(pack(vals, chunk_width, m.layout, m.rows, m.cols, signed=is_top))
    return out
