import numpy as np
import pytest

from qsparse import tile_engine as te
from qsparse.errors import OverflowRiskError, ShuffleStateError

from conftest import byte_transpose_direct, matmul_triple_loop, nibble_transpose_direct


class TestLaneMap:
    @pytest.mark.parametrize("shape", [te.INT8_TILE, te.INT4_TILE])
    @pytest.mark.parametrize("operand", [te.LHS, te.RHS, te.OUT])
    def test_bijection(self, shape, operand):
        per_lane = 2 if operand == te.OUT else shape.elems_per_lane
        seen = set()
        for lane in range(32):
            for slot in range(per_lane):
                seen.add(te.lane_map(shape, operand, lane, slot))
        if operand == te.LHS:
            assert seen == {(r, c) for r in range(8) for c in range(shape.k)}
        elif operand == te.RHS:
            assert seen == {(r, c) for r in range(shape.k) for c in range(8)}
        else:
            assert seen == {(r, c) for r in range(8) for c in range(8)}

    def test_lhs_golden_rows(self):
        # lane 0 holds row 0, k-positions 0..3 at 8-bit
        assert [te.lane_map(te.INT8_TILE, te.LHS, 0, s) for s in range(4)] == [
            (0, 0), (0, 1), (0, 2), (0, 3)]
        assert te.lane_map(te.INT8_TILE, te.LHS, 7, 0) == (1, 12)
        assert te.lane_map(te.INT4_TILE, te.LHS, 5, 7) == (1, 15)

    @pytest.mark.parametrize("shape", [te.INT8_TILE, te.INT4_TILE])
    def test_lhs_slots_k_contiguous(self, shape):
        for lane in range(32):
            cols = [te.lane_map(shape, te.LHS, lane, s)[1]
                    for s in range(shape.elems_per_lane)]
            assert cols == list(range(cols[0], cols[0] + len(cols)))

    def test_out_two_accumulators_per_lane(self):
        cells = {te.lane_map(te.INT8_TILE, te.OUT, lane, s)
                 for lane in range(32) for s in range(2)}
        assert len(cells) == 64

    def test_stride_sequential_load_matches_lane_map(self):
        # distributing a row-major 8 x k stride over lanes in order lands
        # every element exactly where lane_map expects it
        for shape in (te.INT8_TILE, te.INT4_TILE):
            per = shape.elems_per_lane
            for lane in range(32):
                for slot in range(per):
                    flat = lane * per + slot
                    assert te.lane_map(shape, te.LHS, lane, slot) == (
                        flat // shape.k, flat % shape.k)

    def test_range_errors(self):
        with pytest.raises(ValueError):
            te.lane_map(te.INT8_TILE, te.LHS, 32, 0)
        with pytest.raises(ValueError):
            te.lane_map(te.INT8_TILE, te.LHS, 0, 4)


class TestMma:
    def test_all_ones_int8(self):
        ones_a = np.ones((8, 16), dtype=np.int64)
        ones_b = np.ones((16, 8), dtype=np.int64)
        out = te.mma(te.Fragment.from_tile(te.INT8_TILE, te.LHS, ones_a),
                     te.Fragment.from_tile(te.INT8_TILE, te.RHS, ones_b))
        assert (out.to_tile() == 16).all()

    def test_zero_lhs_accumulate_identity(self):
        rng = np.random.default_rng(0)
        c0 = rng.integers(-1000, 1000, (8, 8))
        out = te.mma(te.Fragment.from_tile(te.INT8_TILE, te.LHS, np.zeros((8, 16))),
                     te.Fragment.from_tile(te.INT8_TILE, te.RHS, np.ones((16, 8))),
                     te.Fragment.from_tile(te.INT8_TILE, te.OUT, c0))
        assert (out.to_tile() == c0).all()

    @pytest.mark.parametrize("shape,width", [(te.INT8_TILE, 8), (te.INT4_TILE, 4)])
    @pytest.mark.parametrize("a_signed,b_signed", [(True, True), (True, False),
                                                   (False, True), (False, False)])
    def test_matches_triple_loop_oracle(self, shape, width, a_signed, b_signed):
        rng = np.random.default_rng(width * 10 + a_signed * 2 + b_signed)
        lo_a = -(1 << (width - 1)) if a_signed else 0
        hi_a = (1 << (width - 1)) if a_signed else (1 << width)
        lo_b = -(1 << (width - 1)) if b_signed else 0
        hi_b = (1 << (width - 1)) if b_signed else (1 << width)
        for _ in range(10):
            a = rng.integers(lo_a, hi_a, (8, shape.k))
            b = rng.integers(lo_b, hi_b, (shape.k, 8))
            out = te.mma(te.Fragment.from_tile(shape, te.LHS, a, signed=a_signed),
                         te.Fragment.from_tile(shape, te.RHS, b, signed=b_signed))
            assert (out.to_tile() == matmul_triple_loop(a, b)).all()

    def test_fragment_round_trip(self):
        rng = np.random.default_rng(7)
        a = rng.integers(-8, 8, (8, 32))
        f = te.Fragment.from_tile(te.INT4_TILE, te.LHS, a)
        assert f.lanes.shape == (32, 1)
        assert (f.to_tile() == a).all()

    def test_overflow_detected(self):
        a = np.full((8, 16), 127)
        b = np.full((16, 8), 127)
        big = np.full((8, 8), (1 << 31) - 1)
        fa = te.Fragment.from_tile(te.INT8_TILE, te.LHS, a)
        fb = te.Fragment.from_tile(te.INT8_TILE, te.RHS, b)
        fc = te.Fragment.from_tile(te.INT8_TILE, te.OUT, big)
        with pytest.raises(OverflowRiskError):
            te.mma(fa, fb, fc)

    def test_shape_mismatch(self):
        fa = te.Fragment.from_tile(te.INT8_TILE, te.LHS, np.zeros((8, 16)))
        fb = te.Fragment.from_tile(te.INT4_TILE, te.RHS, np.zeros((32, 8)))
        with pytest.raises(ValueError):
            te.mma(fa, fb)


class TestMmaStacked:
    def _random_parts(self, rng, v, n_parts, k, signed_top=True):
        parts = [rng.integers(0, 16, (v, k)) for _ in range(n_parts)]
        signed = [False] * n_parts
        if signed_top:
            parts[-1] = rng.integers(-8, 8, (v, k))
            signed[-1] = True
        return parts, signed

    @pytest.mark.parametrize("v,n_parts", [(4, 2), (2, 2), (2, 4), (2, 3), (4, 1)])
    def test_equals_unstacked_execution(self, v, n_parts):
        rng = np.random.default_rng(v * 100 + n_parts)
        shape = te.INT4_TILE
        for _ in range(25):
            parts, signed = self._random_parts(rng, v, n_parts, shape.k)
            b = rng.integers(-8, 8, (shape.k, 8))
            fb = te.Fragment.from_tile(shape, te.RHS, b)
            weights = [16 ** i for i in range(n_parts)]
            got = te.mma_stacked(parts, signed, fb, weights).to_tile()[:v]
            want = sum(w * matmul_triple_loop(p, b)[:v]
                       for w, p in zip(weights, parts))
            assert (got == want).all()

    def test_one_half_zero(self):
        rng = np.random.default_rng(5)
        shape = te.INT8_TILE
        live = rng.integers(-100, 100, (4, 16))
        b = rng.integers(-100, 100, (16, 8))
        fb = te.Fragment.from_tile(shape, te.RHS, b)
        got = te.mma_stacked([live, np.zeros((4, 16))], [True, True], fb, [1, 256])
        assert (got.to_tile()[:4] == (live @ b)).all()

    def test_identical_halves_symmetric_raw_tile(self):
        rng = np.random.default_rng(6)
        shape = te.INT8_TILE
        half = rng.integers(0, 256, (4, 16))
        stacked = te.stack_lhs([half, half], [False, False], shape)
        b = te.Fragment.from_tile(shape, te.RHS, rng.integers(-128, 128, (16, 8)))
        raw = te.mma(stacked, b).to_tile()
        assert (raw[:4] == raw[4:]).all()

    def test_full_vector_length_rejected(self):
        shape = te.INT8_TILE
        b = te.Fragment.from_tile(shape, te.RHS, np.zeros((16, 8)))
        with pytest.raises(ValueError, match="V == 8"):
            te.mma_stacked([np.zeros((8, 16))], [True], b, [1])

    def test_lane_exchange_is_xor_pattern(self):
        # accumulators of part j sit a 4*V*j lane offset away, an XOR move
        for v, j in [(4, 1), (2, 1), (2, 2), (2, 3)]:
            offset = 4 * v * j
            for lane in range(4 * v):
                assert (lane + offset) == (lane ^ offset)


class TestByteTranspose:
    def test_symmetric_unchanged(self):
        w = np.array([0x04030201, 0x0A090302, 0x0C0B0903, 0x0D0C0A04], dtype=np.uint32)
        direct = byte_transpose_direct(w)
        assert (te.transpose_bytes(w) == direct).all()

    def test_worked_example(self):
        words = np.array([0x03020100, 0x07060504, 0x0B0A0908, 0x0F0E0D0C],
                         dtype=np.uint32)
        got = te.transpose_bytes(words)
        assert [hex(int(x)) for x in got] == [
            "0xc080400", "0xd090501", "0xe0a0602", "0xf0b0703"]

    def test_involution_and_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            w = rng.integers(0, 1 << 32, 4, dtype=np.uint32)
            t = te.transpose_bytes(w)
            assert (te.transpose_bytes(t) == w).all()
            assert list(t) == byte_transpose_direct(w)

    def test_batched(self):
        rng = np.random.default_rng(9)
        w = rng.integers(0, 1 << 32, (6, 4), dtype=np.uint32)
        batched = te.transpose_bytes(w)
        for i in range(6):
            assert (batched[i] == te.transpose_bytes(w[i])).all()


class TestNibbleShuffleTranspose:
    def _shuffle_rows(self, rows):
        return [rows[p] for p in te.SHUFFLE_PERMUTATION]

    def test_all_equal_nibbles(self):
        rows = np.full(8, 0x55555555, dtype=np.uint32)
        out = te.transpose_nibbles_via_shuffle(rows)
        assert (out == 0x55555555).all()

    def test_equivalence_with_direct_transpose_1000(self):
        rng = np.random.default_rng(10)
        for _ in range(1000):
            rows = rng.integers(0, 1 << 32, 8, dtype=np.uint32)
            shuffled = np.array(self._shuffle_rows(list(rows)), dtype=np.uint32)
            got = te.transpose_nibbles_via_shuffle(shuffled)
            assert list(got) == nibble_transpose_direct(rows)

    def test_exactly_8_ops_per_16_nibbles(self):
        rng = np.random.default_rng(11)
        counter = te.OpCounter()
        blocks = 50
        for _ in range(blocks):
            rows = rng.integers(0, 1 << 32, 8, dtype=np.uint32)
            te.transpose_nibbles_via_shuffle(rows, counter=counter)
        nibble_pairs16 = blocks * 64 // 16
        assert counter.ops == 8 * nibble_pairs16

    def test_unshuffled_input_rejected(self):
        rows = np.zeros(8, dtype=np.uint32)
        with pytest.raises(ShuffleStateError):
            te.transpose_nibbles_via_shuffle(rows, shuffled_order=False)

    def test_permutation_is_bijection(self):
        assert sorted(te.SHUFFLE_PERMUTATION) == list(range(8))

    def test_frozen_permutation_regression(self):
        assert te.derive_shuffle_permutation() == te.SHUFFLE_PERMUTATION

    def test_recovery_property_random(self):
        # shuffling rows by P then running the pipeline yields identity order
        rng = np.random.default_rng(12)
        for _ in range(100):
            rows = rng.integers(0, 1 << 32, 8, dtype=np.uint32)
            shuffled = np.array(self._shuffle_rows(list(rows)), dtype=np.uint32)
            out = te.transpose_nibbles_via_shuffle(shuffled)
            for c in range(8):
                for s in range(8):
                    assert (int(out[c]) >> (4 * s)) & 0xF == \
                        (int(rows[s]) >> (4 * c)) & 0xF


class TestBankConflicts:
    def test_distinct_banks(self):
        p = te.BankAccessPattern(np.arange(32))
        assert te.bank_conflicts(p) == 1

    def test_fully_aliased(self):
        p = te.BankAccessPattern(np.arange(32) * 32)
        assert te.bank_conflicts(p) == 32

    @pytest.mark.parametrize("width,bs_n", [(8, 64), (4, 64), (8, 128), (4, 128)])
    def test_padded_layout_conflict_free(self, width, bs_n):
        layout = te.staging_layout_for(width, bs_n, padded=True)
        for panel in range(layout.words_per_row // 8):
            for pat in te.transpose_access_patterns(layout, panel):
                assert te.bank_conflicts(pat) == 1

    @pytest.mark.parametrize("width,bs_n", [(8, 64), (4, 64), (8, 128), (4, 128)])
    def test_unpadded_layout_conflicts(self, width, bs_n):
        layout = te.staging_layout_for(width, bs_n, padded=False)
        worst = max(te.bank_conflicts(pat)
                    for panel in range(layout.words_per_row // 8)
                    for pat in te.transpose_access_patterns(layout, panel))
        assert worst > 1

    def test_pad_stride_72_at_64_columns(self):
        layout = te.staging_layout_for(8, 64)
        assert layout.address(4, 0) - layout.address(0, 0) == 72
