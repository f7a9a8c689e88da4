"""Software model of warp-level integer MMA tiles.

Covers the two native tile shapes (8x8x16 at 8-bit, 8x8x32 at 4-bit), the
per-lane fragment layout, exact tile multiply-accumulate with 32-bit
accumulators, operation stacking for short vector lengths, the register
transposes used to feed column-major RHS fragments from row-major data, and
a shared-memory bank model for the staging buffers.

A warp is simulated as 32 lanes; all functions are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import OverflowRiskError, ShuffleStateError

LHS = "lhs"
RHS = "rhs"
OUT = "out"

WARP_LANES = 32
NUM_BANKS = 32
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

# Fixed block-of-8 column-index permutation that makes the nibble-shuffle
# transpose come out in original index order. Derived constructively by
# derive_shuffle_permutation() and frozen here; regression-tested.
SHUFFLE_PERMUTATION: Tuple[int, ...] = (0, 2, 4, 6, 1, 3, 5, 7)
SHUFFLE_BLOCK = 8


@dataclass(frozen=True)
class TileShape:
    """One warp-level MMA shape with its operand precisions."""

    m: int
    n: int
    k: int
    operand_width_lhs: int
    operand_width_rhs: int

    def __post_init__(self):
        native = {(8, 8, 16, 8, 8), (8, 8, 32, 4, 4)}
        key = (self.m, self.n, self.k, self.operand_width_lhs, self.operand_width_rhs)
        if key not in native:
            raise ValueError(f"unsupported tile shape {key}; native shapes are {sorted(native)}")

    @property
    def elems_per_lane(self) -> int:
        """Operand elements each lane contributes to LHS and to RHS (one 32-bit word)."""
        return self.k // 4


INT8_TILE = TileShape(8, 8, 16, 8, 8)
INT4_TILE = TileShape(8, 8, 32, 4, 4)


def native_tile(width: int) -> TileShape:
    if width == 8:
        return INT8_TILE
    if width == 4:
        return INT4_TILE
    raise ValueError(f"no native tile for {width}-bit operands")


def lane_map(shape: TileShape, operand: str, lane: int, slot: int) -> Tuple[int, int]:
    """Tile coordinates (row, col) held by (lane, slot).

    Four lanes serve each tile row; each lane holds k/4 consecutive
    reduction positions, so a stride of SR-BCRS data loads straight into
    LHS lanes with no reordering. OUT lanes hold 2 of the 64 accumulators.
    """
    if not 0 <= lane < WARP_LANES:
        raise ValueError(f"lane {lane} out of range [0, 32)")
    per_lane = 2 if operand == OUT else shape.elems_per_lane
    if not 0 <= slot < per_lane:
        raise ValueError(f"slot {slot} out of range [0, {per_lane})")
    group, quad = lane >> 2, lane & 3
    if operand == LHS:
        return group, quad * shape.elems_per_lane + slot
    if operand == RHS:
        return quad * shape.elems_per_lane + slot, group
    if operand == OUT:
        return group, quad * 2 + slot
    raise ValueError(f"unknown operand {operand!r}")


@lru_cache(maxsize=None)
def _lane_coords(shape_key, operand: str):
    """(rows, cols) index arrays of shape (32, slots) for vectorized packing."""
    shape = TileShape(*shape_key)
    per_lane = 2 if operand == OUT else shape.elems_per_lane
    rows = np.empty((WARP_LANES, per_lane), dtype=np.int64)
    cols = np.empty((WARP_LANES, per_lane), dtype=np.int64)
    for lane in range(WARP_LANES):
        for slot in range(per_lane):
            rows[lane, slot], cols[lane, slot] = lane_map(shape, operand, lane, slot)
    return rows, cols


def _shape_key(shape: TileShape):
    return (shape.m, shape.n, shape.k, shape.operand_width_lhs, shape.operand_width_rhs)


@dataclass(frozen=True)
class Fragment:
    """One MMA operand distributed over 32 lanes.

    LHS/RHS lanes hold one packed 32-bit word each; OUT lanes hold two
    int32 accumulators. `row_signed` (LHS only) lets a stacked tile mix
    unsigned lower chunks with a signed top chunk row-group.
    """

    shape: TileShape
    operand: str
    lanes: np.ndarray  # (32, 1) uint32 for LHS/RHS, (32, 2) int32 for OUT
    signed: bool = True
    row_signed: Optional[Tuple[bool, ...]] = None

    @classmethod
    def from_tile(cls, shape: TileShape, operand: str, tile, signed: bool = True,
                  row_signed: Optional[Sequence[bool]] = None) -> "Fragment":
        tile = np.asarray(tile, dtype=np.int64)
        rows, cols = _lane_coords(_shape_key(shape), operand)
        if operand == OUT:
            if tile.shape != (shape.m, shape.n):
                raise ValueError(f"OUT tile must be {shape.m}x{shape.n}")
            acc = tile[rows, cols]
            if acc.min() < INT32_MIN or acc.max() > INT32_MAX:
                raise OverflowRiskError("accumulator outside int32 range")
            return cls(shape, OUT, acc.astype(np.int32))
        width = shape.operand_width_lhs if operand == LHS else shape.operand_width_rhs
        expect = (shape.m, shape.k) if operand == LHS else (shape.k, shape.n)
        if tile.shape != expect:
            raise ValueError(f"{operand} tile must be {expect[0]}x{expect[1]}")
        vals = tile[rows, cols] & ((1 << width) - 1)
        shifts = (np.arange(shape.elems_per_lane, dtype=np.uint64) * width)
        words = np.bitwise_or.reduce(vals.astype(np.uint64) << shifts, axis=1)
        rs = tuple(bool(b) for b in row_signed) if row_signed is not None else None
        if rs is not None and operand != LHS:
            raise ValueError("row_signed applies to LHS fragments only")
        if rs is not None and len(rs) != shape.m:
            raise ValueError(f"row_signed needs {shape.m} flags")
        return cls(shape, operand, words.astype(np.uint32).reshape(WARP_LANES, 1),
                   signed=signed, row_signed=rs)

    def to_tile(self) -> np.ndarray:
        """Reassemble the full tile as int64, honoring signedness metadata."""
        rows, cols = _lane_coords(_shape_key(self.shape), self.operand)
        if self.operand == OUT:
            tile = np.zeros((self.shape.m, self.shape.n), dtype=np.int64)
            tile[rows, cols] = self.lanes.astype(np.int64)
            return tile
        width = (self.shape.operand_width_lhs if self.operand == LHS
                 else self.shape.operand_width_rhs)
        shifts = np.arange(self.shape.elems_per_lane, dtype=np.uint64) * width
        vals = ((self.lanes.astype(np.uint64) >> shifts) & ((1 << width) - 1)).astype(np.int64)
        if self.row_signed is not None:
            sign_rows = np.asarray(self.row_signed, dtype=bool)[rows]
            ext = (vals >> (width - 1)) << width
            vals = np.where(sign_rows, vals - ext, vals)
        elif self.signed:
            vals -= (vals >> (width - 1)) << width
        shape2d = ((self.shape.m, self.shape.k) if self.operand == LHS
                   else (self.shape.k, self.shape.n))
        tile = np.zeros(shape2d, dtype=np.int64)
        tile[rows, cols] = vals
        return tile


def mma(a: Fragment, b: Fragment, c: Optional[Fragment] = None) -> Fragment:
    """One warp-synchronous tile multiply-accumulate: OUT = c + A @ B.

    Exact integer arithmetic; accumulators must stay inside int32 (no
    wrap-around is modeled, out-of-range raises).
    """
    if a.operand != LHS or b.operand != RHS:
        raise ValueError("mma expects (LHS, RHS[, OUT]) fragments")
    if a.shape != b.shape or (c is not None and c.shape != a.shape):
        raise ValueError("fragment shapes do not match")
    if c is not None and c.operand != OUT:
        raise ValueError("accumulator fragment must be OUT")
    acc = c.to_tile() if c is not None else np.zeros((a.shape.m, a.shape.n), dtype=np.int64)
    out = acc + a.to_tile() @ b.to_tile()
    if out.min() < INT32_MIN or out.max() > INT32_MAX:
        raise OverflowRiskError("mma accumulator exceeds int32")
    return Fragment.from_tile(a.shape, OUT, out)


def stack_lhs(parts: Sequence[np.ndarray], part_signed: Sequence[bool],
              shape: TileShape) -> Fragment:
    """Stack 8/V partial LHS tiles (V rows each) into one full-height fragment.

    Part j occupies rows j*V..j*V+V-1; unused rows are zero. Per-part
    signedness is carried as row metadata so unsigned lower chunks can share
    a tile with the signed top chunk.
    """
    parts = [np.asarray(p, dtype=np.int64) for p in parts]
    v = parts[0].shape[0]
    if any(p.shape != (v, shape.k) for p in parts):
        raise ValueError(f"every part must be {v}x{shape.k}")
    if len(parts) != len(part_signed):
        raise ValueError("one signedness flag per part")
    if v * len(parts) > shape.m:
        raise ValueError(f"{len(parts)} parts of {v} rows exceed {shape.m} tile rows")
    tile = np.zeros((shape.m, shape.k), dtype=np.int64)
    row_signed = [False] * shape.m
    for j, (p, s) in enumerate(zip(parts, part_signed)):
        tile[j * v:(j + 1) * v] = p
        row_signed[j * v:(j + 1) * v] = [bool(s)] * v
    return Fragment.from_tile(shape, LHS, tile, row_signed=row_signed)


def redistribute_stacked(raw: Fragment, vector_length: int, weights: Sequence[int],
                         c: Optional[Fragment] = None) -> Fragment:
    """Exchange-and-accumulate step after a stacked MMA.

    Models the warp exchange as an explicit lane permutation: the
    accumulators of part j live in lanes [4*V*j, 4*V*(j+1)) and are pulled
    back to lanes [0, 4*V) (a lane-XOR pattern since 4*V*j is a multiple of
    a power of two), scaled by weights[j], and summed. Lanes past 4*V of
    the result are zeroed.
    """
    if raw.operand != OUT:
        raise ValueError("expected an OUT fragment")
    v = vector_length
    lanes_per_part = 4 * v
    if lanes_per_part * len(weights) > WARP_LANES:
        raise ValueError("too many stacked parts for the warp")
    acc = raw.lanes.astype(np.int64)
    combined = np.zeros_like(acc)
    for j, w in enumerate(weights):
        src = acc[j * lanes_per_part:(j + 1) * lanes_per_part]
        combined[:lanes_per_part] += int(w) * src
    if c is not None:
        if c.operand != OUT or c.shape != raw.shape:
            raise ValueError("accumulator fragment must be a matching OUT")
        combined += c.lanes.astype(np.int64)
    if combined.min() < INT32_MIN or combined.max() > INT32_MAX:
        raise OverflowRiskError("stacked recombination exceeds int32")
    return Fragment(raw.shape, OUT, combined.astype(np.int32))


def mma_stacked(parts: Sequence[np.ndarray], part_signed: Sequence[bool], b: Fragment,
                weights: Sequence[int], c: Optional[Fragment] = None) -> Fragment:
    """Stacked tile multiply for vector lengths below the tile height.

    Equivalent to running one partial MMA per part and combining their
    outputs with the given scale weights; rows 0..V-1 of the returned tile
    hold the combined result.
    """
    v = np.asarray(parts[0]).shape[0]
    if v >= b.shape.m:
        raise ValueError("stacking is not applicable at full vector length (V == 8)")
    if len(parts) != len(weights):
        raise ValueError("one weight per stacked part")
    raw = mma(stack_lhs(parts, part_signed, b.shape), b)
    return redistribute_stacked(raw, v, weights, c)


class OpCounter:
    """Counts logical word-wide bitwise operations for instrumentation."""

    def __init__(self):
        self.ops = 0

    def tick(self, n: int = 1):
        self.ops += int(n)


def transpose_bytes(words) -> np.ndarray:
    """Byte-granularity transpose of a 4x4-byte register block.

    Input is (..., 4) uint32 words, word i holding bytes (i, 0..3)
    LSB-first; output word j holds bytes (0..3, j). Involution.
    """
    w = np.asarray(words, dtype=np.uint32)
    if w.shape[-1] != 4:
        raise ValueError("expected blocks of 4 words")
    shifts = (np.arange(4, dtype=np.uint32) * 8)
    b = (w[..., :, None] >> shifts) & np.uint32(0xFF)        # (..., word, byte)
    t = np.swapaxes(b, -1, -2)
    return np.bitwise_or.reduce(t.astype(np.uint32) << shifts, axis=-1)


def _split_rows_to_words(block: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Steps before the nibble split: byte transpose of the 8x4-byte block,
    then each transposed row of 8 bytes divided into two 32-bit words."""
    shifts = (np.arange(4, dtype=np.uint32) * 8)
    b = (block[..., :, None] >> shifts) & np.uint32(0xFF)     # (..., 8, 4)
    t = np.swapaxes(b, -1, -2)                                # (..., 4, 8)
    lo_half = np.bitwise_or.reduce(t[..., :4].astype(np.uint32) << shifts, axis=-1)
    hi_half = np.bitwise_or.reduce(t[..., 4:].astype(np.uint32) << shifts, axis=-1)
    return lo_half, hi_half


def transpose_nibbles_via_shuffle(block, shuffled_order: bool = True,
                                  counter: Optional[OpCounter] = None) -> np.ndarray:
    """Transpose an 8x8 nibble register block via the index-shuffle trick.

    `block` is (..., 8) uint32: word p holds the 8 nibbles of stored row p,
    LSB-first. Rows must have been gathered in SHUFFLE_PERMUTATION order;
    the word-wide mask/shift/OR stage then lands every output word's
    nibbles in original row order 0..7. Output word c is tile column c.

    Exactly 8 word-wide bitwise operations are spent per pair of 32-bit
    words (16 nibbles); `counter` records them.
    """
    if not shuffled_order:
        raise ShuffleStateError(
            "input rows are not in shuffle order; the transpose would come out permuted")
    w = np.asarray(block, dtype=np.uint32)
    if w.shape[-1] != 8:
        raise ValueError("expected blocks of 8 words")
    a, b = _split_rows_to_words(w)
    pairs = a.size
    m_lo = np.uint32(0x0F0F0F0F)
    m_hi = np.uint32(0xF0F0F0F0)
    lo_a = a & m_lo
    lo_b = b & m_lo
    low = lo_a | (lo_b << np.uint32(4))
    hi_a = (a >> np.uint32(4)) & m_lo
    high = hi_a | (b & m_hi)
    if counter is not None:
        counter.tick(8 * pairs)
    out = np.empty(w.shape, dtype=np.uint32)
    out[..., 0::2] = low
    out[..., 1::2] = high
    return out


def derive_shuffle_permutation() -> Tuple[int, ...]:
    """Brute-force the unique 8-permutation recovered by the nibble transpose.

    Feeds row-identifying nibble patterns through every candidate ordering
    and keeps the one whose transposed output lands in index order 0..7.
    """
    perms = np.array(list(permutations(range(8))), dtype=np.uint32)
    stored = perms * np.uint32(0x11111111)      # row p: all 8 nibbles = perm[p]
    out = transpose_nibbles_via_shuffle(stored, shuffled_order=True)
    want = np.uint32(0x76543210)
    hits = np.nonzero((out == want).all(axis=1))[0]
    if hits.size != 1:
        raise RuntimeError(f"expected a unique permutation, found {hits.size}")
    return tuple(int(x) for x in perms[hits[0]])


@dataclass(frozen=True)
class BankAccessPattern:
    """One simultaneous 32-bit access per lane of a warp."""

    lane_addresses: np.ndarray

    def __post_init__(self):
        addrs = np.asarray(self.lane_addresses, dtype=np.int64)
        if addrs.shape != (WARP_LANES,):
            raise ValueError("expected exactly 32 lane addresses")
        object.__setattr__(self, "lane_addresses", addrs)


def bank_conflicts(p: BankAccessPattern) -> int:
    """Max lanes hitting any one of the 32 word-wide banks (1 == conflict-free)."""
    banks = p.lane_addresses % NUM_BANKS
    return int(np.bincount(banks, minlength=NUM_BANKS).max())


@dataclass(frozen=True)
class StagingLayout:
    """Shared-memory staging buffer for gathered RHS rows.

    `rows` rows of `words_per_row` packed words; 8 pad words are inserted
    after every transpose row-group (4 rows at 8-bit, 8 rows at 4-bit), so
    at the canonical 64-column tile the layout pads 8 words per 64 payload
    words (a 72-word group stride).
    """

    rows: int
    words_per_row: int
    rows_per_group: int
    padded: bool = True

    PAD_WORDS = 8

    def address(self, row: int, word: int):
        base = row * self.words_per_row + word
        if not self.padded:
            return base
        return base + self.PAD_WORDS * (row // self.rows_per_group)

    @property
    def size(self) -> int:
        return int(self.address(self.rows - 1, self.words_per_row - 1)) + 1


def staging_layout_for(rhs_width: int, bs_n: int, padded: bool = True) -> StagingLayout:
    """Staging layout for a BS_k x BS_n tile of `rhs_width`-bit values."""
    tile = native_tile(rhs_width)
    words_per_row = bs_n * rhs_width // 32
    rows_per_group = 32 // rhs_width
    return StagingLayout(tile.k, words_per_row, rows_per_group, padded)


def transpose_access_patterns(layout: StagingLayout, panel: int) -> List[BankAccessPattern]:
    """Per-step warp access patterns of the register-transpose load phase.

    Lane 4g+t reads word column 8*panel + g from rows t*rows_per_group + i,
    one row-group step i at a time; each pattern is one such step.
    """
    if 8 * (panel + 1) > layout.words_per_row:
        raise ValueError(f"panel {panel} outside {layout.words_per_row} word columns")
    lanes = np.arange(WARP_LANES)
    g, t = lanes >> 2, lanes & 3
    patterns = []
    for i in range(layout.rows_per_group):
        rows = t * layout.rows_per_group + i
        addrs = np.array([layout.address(int(r), int(8 * panel + gg))
                          for r, gg in zip(rows, g)], dtype=np.int64)
        patterns.append(BankAccessPattern(addrs))
    return patterns
