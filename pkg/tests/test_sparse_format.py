import dataclasses
import io

import numpy as np
import pytest

from qsparse import sparse_format as sf
from qsparse.errors import DlmcParseError, FormatError, ShuffleStateError, StructureError

TINY_DLMC = "3, 5, 2\n0 1 1 2\n4 0\n"


def random_structured(seed, rows=64, cols=64, v=8, sparsity=0.9):
    return sf.generate_synthetic(rows, cols, v, sparsity, seed)


class TestDenseBcrs:
    def test_all_zero(self):
        b = sf.dense_to_bcrs(np.zeros((8, 8), dtype=np.int64), 8)
        assert list(b.row_offsets) == [0, 0]
        assert b.n_blocks == 0
        assert (sf.bcrs_to_dense(b) == 0).all()

    def test_hand_block(self):
        d = np.zeros((2, 4), dtype=np.int64)
        d[0, 2], d[1, 2] = 3, 5
        b = sf.dense_to_bcrs(d, 2)
        assert list(b.col_indices) == [2]
        assert list(b._flat_values) == [3, 5]
        assert (sf.bcrs_to_dense(b) == d).all()

    @pytest.mark.parametrize("seed", range(8))
    def test_round_trip_random(self, seed):
        b = random_structured(seed)
        d = sf.bcrs_to_dense(b)
        assert (sf.bcrs_to_dense(sf.dense_to_bcrs(d, 8)) == d).all()

    def test_structure_violation_located(self):
        d = np.zeros((4, 4), dtype=np.int64)
        d[0, 1] = 7  # only one of the two rows in the V=2 group
        with pytest.raises(StructureError, match="column 1 of vector row 0"):
            sf.dense_to_bcrs(d, 2)


class TestSrBcrs:
    def test_hand_layout_with_padding(self):
        d = np.zeros((2, 8), dtype=np.int64)
        d[:, 1] = (1, 2)
        d[:, 5] = (3, 4)
        d[:, 7] = (5, 6)
        s = sf.bcrs_to_srbcrs(sf.dense_to_bcrs(d, 2), 4)
        assert list(s.col_indices[:3]) == [1, 5, 7]
        assert s.col_indices[3] == sf.SENTINEL_INDEX
        # 2 rows of 4 elements, fourth column zero padding
        assert list(s._flat_values) == [1, 3, 5, 0, 2, 4, 6, 0]
        assert (sf.srbcrs_to_dense(s) == d).all()

    def test_empty_vector_row(self):
        d = np.zeros((4, 8), dtype=np.int64)
        d[2:4, 3] = (9, 9)
        s = sf.bcrs_to_srbcrs(sf.dense_to_bcrs(d, 2), 4)
        assert s.row_begin[0] == s.row_end[0] == 0
        assert s.stored_count(0) == 0
        assert (sf.srbcrs_to_dense(s) == d).all()

    def test_dual_offsets_count(self):
        s = sf.bcrs_to_srbcrs(random_structured(0), 16)
        assert len(s.row_begin) == s.vector_rows
        assert len(s.row_end) == s.vector_rows

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("stride", [8, 16, 32])
    def test_round_trip(self, seed, stride):
        b = random_structured(seed)
        d = sf.bcrs_to_dense(b)
        s = sf.bcrs_to_srbcrs(b, stride)
        assert (sf.srbcrs_to_dense(s) == d).all()

    def test_padding_soundness_stride_increase(self):
        b = random_structured(3, sparsity=0.8)
        d16 = sf.srbcrs_to_dense(sf.bcrs_to_srbcrs(b, 16))
        d32 = sf.srbcrs_to_dense(sf.bcrs_to_srbcrs(b, 32))
        d64 = sf.srbcrs_to_dense(sf.bcrs_to_srbcrs(b, 64))
        assert (d16 == d32).all() and (d32 == d64).all()

    def test_storage_accounting(self):
        b = random_structured(4, sparsity=0.93)
        s = sf.bcrs_to_srbcrs(b, 16)
        true_total = 0
        stored_total = 0
        for r in range(s.vector_rows):
            true = int(s.row_end[r] - s.row_begin[r])
            stored = s.stored_count(r)
            assert stored == -(-true // 16) * 16
            true_total += true
            stored_total += stored
        assert s.stored_vectors == stored_total
        assert s.padded_fraction == pytest.approx(
            (stored_total - true_total) / stored_total)

    def test_corrupt_offsets_rejected(self):
        s = sf.bcrs_to_srbcrs(random_structured(5), 16)
        with pytest.raises(FormatError):
            dataclasses.replace(s, row_begin=s.row_begin + 1)

    def test_srbcrs_to_bcrs_round_trip(self):
        b = random_structured(6)
        s = sf.bcrs_to_srbcrs(b, 16)
        back = sf.srbcrs_to_bcrs(s)
        assert (sf.bcrs_to_dense(back) == sf.bcrs_to_dense(b)).all()


class TestShuffle:
    def test_indices_reordered_by_frozen_permutation(self):
        d = np.zeros((8, 16), dtype=np.int64)
        d[:, :8] = np.arange(1, 9)  # blocks at columns 0..7
        s = sf.bcrs_to_srbcrs(sf.dense_to_bcrs(d, 8), 8)
        sh = sf.shuffle_indices(s)
        from qsparse.tile_engine import SHUFFLE_PERMUTATION
        assert list(sh.col_indices) == list(SHUFFLE_PERMUTATION)

    def test_reconstruction_unchanged(self):
        b = random_structured(7)
        s = sf.bcrs_to_srbcrs(b, 32)
        sh = sf.shuffle_indices(s)
        assert sh.shuffled
        assert (sf.srbcrs_to_dense(sh) == sf.srbcrs_to_dense(s)).all()

    def test_double_shuffle_rejected(self):
        s = sf.bcrs_to_srbcrs(random_structured(8), 16)
        with pytest.raises(ShuffleStateError):
            sf.shuffle_indices(sf.shuffle_indices(s))

    def test_stride_must_divide_by_8(self):
        d = np.zeros((2, 8), dtype=np.int64)
        d[:, 1] = (1, 2)
        s = sf.bcrs_to_srbcrs(sf.dense_to_bcrs(d, 2), 4)
        with pytest.raises(ValueError):
            sf.shuffle_indices(s)


class TestDlmc:
    def test_empty_matrix(self):
        csr = sf.read_dlmc("4, 4, 0\n0 0 0 0 0\n\n")
        assert csr.nnz == 0 and csr.rows == 4

    def test_tiny_fixture(self):
        csr = sf.read_dlmc(io.StringIO(TINY_DLMC))
        assert (csr.rows, csr.cols, csr.nnz) == (3, 5, 2)
        assert list(csr.row_offsets) == [0, 1, 1, 2]
        assert list(csr.col_indices) == [4, 0]

    def test_truncated_index_line(self):
        with pytest.raises(DlmcParseError, match="line 3"):
            sf.read_dlmc("3, 5, 2\n0 1 1 2\n4\n")

    def test_bad_header(self):
        with pytest.raises(DlmcParseError, match="line 1"):
            sf.read_dlmc("3, 5\n0 0 0 0\n\n")

    def test_offsets_mismatch(self):
        with pytest.raises(DlmcParseError, match="line 2"):
            sf.read_dlmc("3, 5, 2\n0 1 2\n4 0\n")

    def test_write_read_round_trip(self):
        csr = sf.read_dlmc(TINY_DLMC)
        buf = io.StringIO()
        sf.write_dlmc(csr, buf)
        back = sf.read_dlmc(buf.getvalue())
        assert back.nnz == csr.nnz
        assert list(back.row_offsets) == list(csr.row_offsets)
        assert list(back.col_indices) == list(csr.col_indices)

    def test_synthetic_serializes_as_fixture(self):
        b = sf.generate_synthetic(32, 40, 4, 0.8, seed=13)
        buf = io.StringIO()
        sf.write_dlmc(sf.bcrs_to_csr(b), buf)
        redilated = sf.dilate(sf.read_dlmc(buf.getvalue()), 4, value_seed=0)
        got = sf.bcrs_to_dense(redilated) != 0
        assert (got == (sf.bcrs_to_dense(b) != 0)).all()


class TestDilate:
    def test_single_scalar(self):
        csr = sf.read_dlmc("1, 1, 1\n0 1\n0\n")
        b = sf.dilate(csr, 4, value_seed=0)
        assert b.scalar_rows == 4 and b.n_blocks == 1

    def test_deterministic(self):
        csr = sf.read_dlmc(TINY_DLMC)
        b1 = sf.dilate(csr, 8, value_seed=42)
        b2 = sf.dilate(csr, 8, value_seed=42)
        assert (b1._flat_values == b2._flat_values).all()

    @pytest.mark.parametrize("v", [2, 4, 8])
    def test_nnz_counting(self, v):
        csr = sf.read_dlmc(TINY_DLMC)
        b = sf.dilate(csr, v, value_seed=1)
        dense = sf.bcrs_to_dense(b)
        assert np.count_nonzero(dense) == csr.nnz * v


class TestSynthetic:
    def test_sparsity_zero_fully_dense(self):
        b = sf.generate_synthetic(16, 8, 8, 0.0, seed=0)
        assert b.n_blocks == 2 * 8

    def test_block_count(self):
        b = sf.generate_synthetic(16, 100, 8, 0.98, seed=0)
        for r in range(b.vector_rows):
            assert b.row_offsets[r + 1] - b.row_offsets[r] == 2

    def test_deterministic(self):
        a = sf.generate_synthetic(32, 64, 4, 0.7, seed=9)
        b = sf.generate_synthetic(32, 64, 4, 0.7, seed=9)
        assert (sf.bcrs_to_dense(a) == sf.bcrs_to_dense(b)).all()

    def test_bad_sparsity(self):
        with pytest.raises(ValueError):
            sf.generate_synthetic(8, 8, 8, 1.0, seed=0)
