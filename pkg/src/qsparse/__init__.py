"""Quantized sparse matrix kernels on a software tensor-core tile model."""

from .attention import (AttentionConfig, AttentionResult, QuantizationParams,
                        multi_head_attention, quantize, sparse_attention)
from .emulation import EmulationScheme, emulated_matmul, plan
from .errors import (DlmcParseError, FormatError, OverflowRiskError, QsparseError,
                     ShuffleStateError, StructureError, UnsupportedPrecisionError)
from .kernels import SddmmProblem, SpmmProblem, TilingConfig, sddmm, spmm, spmm_pipelined
from .qint import (ChunkDecomposition, PackedArray, PackedMatrix, decompose_matrix,
                   pack, pack_dense, split_signed, split_unsigned, unpack)
from .sparse_format import (BcrsMatrix, CsrMatrix, SrBcrsMatrix, bcrs_to_csr,
                            bcrs_to_dense, bcrs_to_srbcrs, dense_to_bcrs, dilate,
                            generate_synthetic, read_dlmc, shuffle_indices,
                            srbcrs_to_dense, write_dlmc)
from .tile_engine import (BankAccessPattern, Fragment, TileShape, bank_conflicts,
                          derive_shuffle_permutation, lane_map, mma, mma_stacked,
                          transpose_bytes, transpose_nibbles_via_shuffle)

__version__ = "0.1.0"
