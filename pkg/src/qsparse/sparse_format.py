"""BCRS and strided row-major BCRS (SR-BCRS) sparse formats with 1-D blocks.

Blocks are dense columns of V consecutive scalar rows (V in {2, 4, 8}).
SR-BCRS groups a row's vectors into strides of BS_k vectors, stores each
stride as V rows of BS_k elements (row-major within the stride), pads short
strides with zero values and sentinel column indices, and keeps dual
per-row offsets (begin and one-past-last-valid, measured in vectors).

Constructed matrices are immutable; all conversions return new objects.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from functools import cached_property
from typing import List, Optional, TextIO, Union

import numpy as np

from .errors import DlmcParseError, FormatError, ShuffleStateError, StructureError
from .qint import PackedArray, SUPPORTED_BIT_WIDTHS, signed_range
from .tile_engine import SHUFFLE_BLOCK, SHUFFLE_PERMUTATION

SENTINEL_INDEX = np.uint32(0xFFFFFFFF)

SUPPORTED_VECTOR_LENGTHS = (2, 4, 8)

Values = Union[PackedArray, np.ndarray]


def _values_array(values: Values) -> np.ndarray:
    if isinstance(values, PackedArray):
        return values.to_values()
    return np.asarray(values)


def _value_nbytes(values: Values) -> int:
    if isinstance(values, PackedArray):
        return values.nbytes
    return int(np.asarray(values).nbytes)


def fit_bit_width(values: np.ndarray) -> int:
    """Smallest supported signed bit width holding every value."""
    vals = np.asarray(values, dtype=np.int64)
    lo = int(vals.min()) if vals.size else 0
    hi = int(vals.max()) if vals.size else 0
    for bw in SUPPORTED_BIT_WIDTHS:
        a, b = signed_range(bw)
        if a <= lo and hi <= b:
            return bw
    raise ValueError(f"values in [{lo}, {hi}] exceed 16-bit signed range")


@dataclass(frozen=True)
class CsrMatrix:
    """Scalar CSR, the DLMC precursor to a dilated block matrix."""

    rows: int
    cols: int
    nnz: int
    row_offsets: np.ndarray
    col_indices: np.ndarray


@dataclass(frozen=True)
class BcrsMatrix:
    """Block compressed sparse row with 1-D vertical blocks.

    `values` stores blocks consecutively, each block V values top-to-bottom
    in row order; bit-packed for integer precisions, a raw array for 32-bit
    accumulators or epilogue outputs.
    """

    scalar_rows: int
    scalar_cols: int
    vector_length: int
    row_offsets: np.ndarray   # (scalar_rows/V)+1 block counts
    col_indices: np.ndarray   # one column per block, uint32
    values: Values

    def __post_init__(self):
        v = self.vector_length
        if self.scalar_rows % v:
            raise FormatError(f"scalar_rows {self.scalar_rows} not divisible by V={v}")
        if self.scalar_cols >= int(SENTINEL_INDEX):
            raise FormatError("scalar_cols collides with the sentinel index")
        offs = np.asarray(self.row_offsets, dtype=np.int64)
        if offs.shape != (self.scalar_rows // v + 1,):
            raise FormatError("row_offsets must have scalar_rows/V + 1 entries")
        if (np.diff(offs) < 0).any() or offs[0] != 0:
            raise FormatError("row_offsets must be non-decreasing from 0")
        idx = np.asarray(self.col_indices, dtype=np.uint32)
        if idx.shape != (int(offs[-1]),):
            raise FormatError("col_indices length must equal the final row offset")
        if idx.size and int(idx.max()) >= self.scalar_cols:
            raise FormatError("column index out of range")
        for r in range(len(offs) - 1):
            row = idx[offs[r]:offs[r + 1]].astype(np.int64)
            if (np.diff(row) <= 0).any():
                raise FormatError(f"col_indices not strictly increasing in vector row {r}")
        if len(_values_array(self.values)) != idx.size * v:
            raise FormatError("values length must be V per block")
        object.__setattr__(self, "row_offsets", offs)
        object.__setattr__(self, "col_indices", idx)

    @property
    def vector_rows(self) -> int:
        return self.scalar_rows // self.vector_length

    @property
    def n_blocks(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def nbytes(self) -> int:
        return _value_nbytes(self.values) + self.col_indices.nbytes + self.row_offsets.nbytes

    @cached_property
    def _flat_values(self) -> np.ndarray:
        return _values_array(self.values)

    def block_values(self, block: int) -> np.ndarray:
        v = self.vector_length
        return self._flat_values[block * v:(block + 1) * v]


@dataclass(frozen=True)
class SrBcrsMatrix:
    """Strided row-major BCRS.

    Each stride of `stride` vectors is stored as V rows of `stride`
    elements: element (v, j) of stride s lives at s*(V*stride) + v*stride
    + j. Padding value slots are zero; padding index slots hold
    SENTINEL_INDEX. When `shuffled`, the index array (only) is permuted by
    SHUFFLE_PERMUTATION within every block of 8 stored vectors, which is
    what the nibble-shuffle register transpose expects.
    """

    scalar_rows: int
    scalar_cols: int
    vector_length: int
    stride: int
    row_begin: np.ndarray    # per vector row, offset of first stored vector
    row_end: np.ndarray      # per vector row, one past the last valid vector
    col_indices: np.ndarray  # one per stored vector, sentinel in padding
    values: Values
    shuffled: bool = False

    def __post_init__(self):
        v = self.vector_length
        if self.scalar_rows % v:
            raise FormatError(f"scalar_rows {self.scalar_rows} not divisible by V={v}")
        if self.stride <= 0:
            raise FormatError("stride must be positive")
        nrows = self.scalar_rows // v
        begin = np.asarray(self.row_begin, dtype=np.int64)
        end = np.asarray(self.row_end, dtype=np.int64)
        if begin.shape != (nrows,) or end.shape != (nrows,):
            raise FormatError("need one begin and one end offset per vector row")
        idx = np.asarray(self.col_indices, dtype=np.uint32)
        stored_total = idx.size
        expect_begin = 0
        for r in range(nrows):
            if begin[r] != expect_begin:
                raise FormatError(f"row {r} begin offset {begin[r]} != expected {expect_begin}")
            true = int(end[r] - begin[r])
            if true < 0:
                raise FormatError(f"row {r} has end before begin")
            stored = -(-true // self.stride) * self.stride
            expect_begin += stored
        if expect_begin != stored_total:
            raise FormatError(f"stored vector count {stored_total} != offsets imply {expect_begin}")
        if len(_values_array(self.values)) != stored_total * v:
            raise FormatError("values length must be V per stored vector")
        object.__setattr__(self, "row_begin", begin)
        object.__setattr__(self, "row_end", end)
        object.__setattr__(self, "col_indices", idx)

    @property
    def vector_rows(self) -> int:
        return self.scalar_rows // self.vector_length

    @property
    def stored_vectors(self) -> int:
        return int(self.col_indices.size)

    @property
    def nbytes(self) -> int:
        return (_value_nbytes(self.values) + self.col_indices.nbytes
                + self.row_begin.nbytes + self.row_end.nbytes)

    @property
    def padded_fraction(self) -> float:
        stored = self.stored_vectors
        if stored == 0:
            return 0.0
        true = int((self.row_end - self.row_begin).sum())
        return (stored - true) / stored

    def stored_count(self, r: int) -> int:
        true = int(self.row_end[r] - self.row_begin[r])
        return -(-true // self.stride) * self.stride

    def strides_in_row(self, r: int) -> int:
        return self.stored_count(r) // self.stride

    @cached_property
    def _flat_values(self) -> np.ndarray:
        return _values_array(self.values)

    def stride_block(self, r: int, s: int):
        """(col_indices, V x stride values) of stride s of vector row r."""
        v = self.vector_length
        base = int(self.row_begin[r]) + s * self.stride
        idx = self.col_indices[base:base + self.stride]
        stride_id = base // self.stride
        vals = self._flat_values[stride_id * v * self.stride:(stride_id + 1) * v * self.stride]
        return idx, vals.reshape(v, self.stride)

    def unshuffled_indices(self) -> np.ndarray:
        """Column indices with the block-of-8 shuffle undone."""
        if not self.shuffled:
            return self.col_indices
        perm = np.asarray(SHUFFLE_PERMUTATION)
        idx = self.col_indices.reshape(-1, SHUFFLE_BLOCK)
        out = np.empty_like(idx)
        out[:, perm] = idx
        return out.reshape(-1)


def dense_to_bcrs(dense, vector_length: int, bit_width: Optional[int] = None) -> BcrsMatrix:
    """Convert a dense integer matrix with 1-D block structure to BCRS.

    Every nonzero column of a vector-row group must be dense across all V
    rows; mixed zero/nonzero columns raise StructureError naming the spot.
    """
    d = np.asarray(dense, dtype=np.int64)
    v = vector_length
    if d.ndim != 2 or d.shape[0] % v:
        raise StructureError(f"matrix rows {d.shape} not divisible by V={v}")
    nrows = d.shape[0] // v
    offsets = [0]
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for r in range(nrows):
        group = d[r * v:(r + 1) * v]
        nz = group != 0
        col_any = nz.any(axis=0)
        col_all = nz.all(axis=0)
        bad = np.nonzero(col_any & ~col_all)[0]
        if bad.size:
            raise StructureError(
                f"column {int(bad[0])} of vector row {r} is neither fully dense nor fully zero")
        c = np.nonzero(col_any)[0]
        cols.append(c)
        vals.append(group[:, c].T.reshape(-1))  # block-major, top-to-bottom per block
        offsets.append(offsets[-1] + c.size)
    col_indices = np.concatenate(cols) if cols else np.zeros(0)
    flat = np.concatenate(vals) if vals else np.zeros(0, dtype=np.int64)
    bw = bit_width if bit_width is not None else fit_bit_width(flat)
    return BcrsMatrix(d.shape[0], d.shape[1], v,
                      np.asarray(offsets, dtype=np.int64),
                      col_indices.astype(np.uint32),
                      PackedArray.from_values(flat, bw, signed=True))


def _dense_dtype(flat: np.ndarray):
    return flat.dtype if flat.dtype.kind == "f" else np.int64


def bcrs_to_dense(b: BcrsMatrix) -> np.ndarray:
    v = b.vector_length
    flat = b._flat_values
    d = np.zeros((b.scalar_rows, b.scalar_cols), dtype=_dense_dtype(flat))
    for r in range(b.vector_rows):
        lo, hi = int(b.row_offsets[r]), int(b.row_offsets[r + 1])
        for i in range(lo, hi):
            d[r * v:(r + 1) * v, int(b.col_indices[i])] = flat[i * v:(i + 1) * v]
    return d


def bcrs_to_srbcrs(b: BcrsMatrix, stride: int) -> SrBcrsMatrix:
    """Repack BCRS into the strided row-major layout with zero/sentinel padding."""
    v = b.vector_length
    flat = b._flat_values
    begin, end = [], []
    idx_parts: List[np.ndarray] = []
    val_parts: List[np.ndarray] = []
    cursor = 0
    for r in range(b.vector_rows):
        lo, hi = int(b.row_offsets[r]), int(b.row_offsets[r + 1])
        true = hi - lo
        stored = -(-true // stride) * stride
        begin.append(cursor)
        end.append(cursor + true)
        cursor += stored
        idx = np.full(stored, SENTINEL_INDEX, dtype=np.uint32)
        idx[:true] = b.col_indices[lo:hi]
        idx_parts.append(idx)
        # blocks -> (vector, element) then strided row-major: (V, stored) per row
        blocks = np.zeros((stored, v), dtype=np.int64)
        blocks[:true] = flat[lo * v:hi * v].reshape(true, v)
        for s in range(stored // stride):
            val_parts.append(blocks[s * stride:(s + 1) * stride].T.reshape(-1))
    col_indices = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.uint32)
    values = np.concatenate(val_parts) if val_parts else np.zeros(0, dtype=np.int64)
    if isinstance(b.values, PackedArray):
        packed: Values = PackedArray.from_values(values, b.values.bit_width, b.values.signed)
    else:
        packed = values.astype(np.asarray(b.values).dtype)
    return SrBcrsMatrix(b.scalar_rows, b.scalar_cols, v, stride,
                        np.asarray(begin, dtype=np.int64), np.asarray(end, dtype=np.int64),
                        col_indices, packed, shuffled=False)


def srbcrs_to_dense(m: SrBcrsMatrix) -> np.ndarray:
    """Exact dense reconstruction; padding contributes nothing."""
    v = m.vector_length
    idx = m.unshuffled_indices()
    flat = m._flat_values
    d = np.zeros((m.scalar_rows, m.scalar_cols), dtype=_dense_dtype(flat))
    for r in range(m.vector_rows):
        base = int(m.row_begin[r])
        true = int(m.row_end[r]) - base
        stored = m.stored_count(r)
        for s in range(stored // m.stride):
            vec0 = base + s * m.stride
            stride_id = vec0 // m.stride
            block = flat[stride_id * v * m.stride:(stride_id + 1) * v * m.stride]
            block = block.reshape(v, m.stride)
            for j in range(m.stride):
                if s * m.stride + j >= true:
                    break
                d[r * v:(r + 1) * v, int(idx[vec0 + j])] = block[:, j]
    return d


def srbcrs_to_bcrs(m: SrBcrsMatrix) -> BcrsMatrix:
    """Drop padding and return the plain block format."""
    v = m.vector_length
    idx = m.unshuffled_indices()
    flat = m._flat_values
    offsets = [0]
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for r in range(m.vector_rows):
        base = int(m.row_begin[r])
        true = int(m.row_end[r]) - base
        cols.append(idx[base:base + true].astype(np.int64))
        block_vals = np.empty((true, v), dtype=flat.dtype)
        for s in range(m.strides_in_row(r)):
            _, block = m.stride_block(r, s)
            take = min(m.stride, true - s * m.stride)
            if take <= 0:
                break
            block_vals[s * m.stride:s * m.stride + take] = block[:, :take].T
        order = np.argsort(cols[-1], kind="stable")
        cols[-1] = cols[-1][order]
        vals.append(block_vals[order].reshape(-1))
        offsets.append(offsets[-1] + true)
    col_indices = (np.concatenate(cols) if cols else np.zeros(0)).astype(np.uint32)
    values = np.concatenate(vals) if vals else np.zeros(0, dtype=flat.dtype)
    if isinstance(m.values, PackedArray):
        packed: Values = PackedArray.from_values(values, m.values.bit_width, m.values.signed)
    else:
        packed = values
    return BcrsMatrix(m.scalar_rows, m.scalar_cols, v,
                      np.asarray(offsets, dtype=np.int64), col_indices, packed)


def shuffle_indices(m: SrBcrsMatrix) -> SrBcrsMatrix:
    """Permute the column-index array block-of-8-wise by SHUFFLE_PERMUTATION.

    Values stay in place; the represented matrix is unchanged (the decoder
    and the 4-bit transpose path both know the permutation).
    """
    if m.shuffled:
        raise ShuffleStateError("column indices are already shuffled")
    if m.stride % SHUFFLE_BLOCK:
        raise ValueError(f"stride {m.stride} not divisible by shuffle block {SHUFFLE_BLOCK}")
    perm = np.asarray(SHUFFLE_PERMUTATION)
    idx = m.col_indices.reshape(-1, SHUFFLE_BLOCK)[:, perm].reshape(-1)
    return replace(m, col_indices=idx, shuffled=True)


def read_dlmc(stream: Union[TextIO, str]) -> CsrMatrix:
    """Parse the DLMC text format: header "rows, cols, nnz", then row
    offsets, then column indices, whitespace/comma separated."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = stream.read().splitlines()

    def fields(line_no: int) -> List[int]:
        if line_no > len(lines):
            raise DlmcParseError("unexpected end of input", line_no)
        raw = lines[line_no - 1].replace(",", " ").split()
        try:
            return [int(tok) for tok in raw]
        except ValueError as e:
            raise DlmcParseError(f"non-integer token: {e}", line_no) from None

    header = fields(1)
    if len(header) != 3:
        raise DlmcParseError(f"header must be 'rows, cols, nnz', got {len(header)} fields", 1)
    rows, cols, nnz = header
    offsets = np.asarray(fields(2), dtype=np.int64)
    if offsets.size != rows + 1:
        raise DlmcParseError(f"expected {rows + 1} row offsets, got {offsets.size}", 2)
    if offsets[0] != 0 or (np.diff(offsets) < 0).any():
        raise DlmcParseError("row offsets must be non-decreasing from 0", 2)
    if offsets[-1] != nnz:
        raise DlmcParseError(f"last offset {offsets[-1]} != nnz {nnz}", 2)
    indices = np.asarray(fields(3) if nnz else [], dtype=np.int64)
    if indices.size != nnz:
        raise DlmcParseError(f"expected {nnz} column indices, got {indices.size}", 3)
    if nnz and (indices.max() >= cols or indices.min() < 0):
        raise DlmcParseError("column index out of range", 3)
    return CsrMatrix(rows, cols, nnz, offsets, indices.astype(np.uint32))


def write_dlmc(csr: CsrMatrix, stream: TextIO) -> None:
    stream.write(f"{csr.rows}, {csr.cols}, {csr.nnz}\n")
    stream.write(" ".join(str(int(x)) for x in csr.row_offsets) + "\n")
    stream.write(" ".join(str(int(x)) for x in csr.col_indices) + "\n")


def bcrs_to_csr(b: BcrsMatrix) -> CsrMatrix:
    """Collapse each V-block to one scalar nonzero (the structural inverse of
    dilate), so synthetic matrices serialize to DLMC text as fixtures."""
    return CsrMatrix(b.vector_rows, b.scalar_cols, b.n_blocks,
                     np.asarray(b.row_offsets, dtype=np.int64),
                     b.col_indices.copy())


def dilate(csr: CsrMatrix, vector_length: int, value_seed: int,
           bit_width: int = 8, max_magnitude: Optional[int] = None) -> BcrsMatrix:
    """Replace each scalar nonzero with a V-length block of seeded values."""
    v = vector_length
    rng = np.random.default_rng(value_seed)
    cap = max_magnitude if max_magnitude is not None else signed_range(bit_width)[1]
    n_vals = csr.nnz * v
    mags = rng.integers(1, cap + 1, size=n_vals)
    signs = rng.choice((-1, 1), size=n_vals)
    values = mags * signs
    return BcrsMatrix(csr.rows * v, csr.cols, v,
                      np.asarray(csr.row_offsets, dtype=np.int64),
                      np.asarray(csr.col_indices, dtype=np.uint32),
                      PackedArray.from_values(values, bit_width, signed=True))


def generate_synthetic(scalar_rows: int, scalar_cols: int, vector_length: int,
                       sparsity: float, seed: int, bit_width: int = 8,
                       max_magnitude: Optional[int] = None) -> BcrsMatrix:
    """Random V-structured matrix: floor((1-sparsity)*cols) blocks per vector
    row at distinct uniformly sampled columns; deterministic in seed."""
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    v = vector_length
    rng = np.random.default_rng(seed)
    per_row = int((1 - sparsity) * scalar_cols)
    nrows = scalar_rows // v
    cap = max_magnitude if max_magnitude is not None else signed_range(bit_width)[1]
    cols = []
    offsets = [0]
    for _ in range(nrows):
        c = np.sort(rng.choice(scalar_cols, size=per_row, replace=False))
        cols.append(c)
        offsets.append(offsets[-1] + per_row)
    col_indices = (np.concatenate(cols) if cols else np.zeros(0)).astype(np.uint32)
    n_vals = col_indices.size * v
    values = rng.integers(1, cap + 1, size=n_vals) * rng.choice((-1, 1), size=n_vals)
    return BcrsMatrix(scalar_rows, scalar_cols, v,
                      np.asarray(offsets, dtype=np.int64), col_indices,
                      PackedArray.from_values(values, bit_width, signed=True))
