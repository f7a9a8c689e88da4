"""Exception types shared across the library."""


class QsparseError(Exception):
    """Base class for library errors."""


class StructureError(QsparseError, ValueError):
    """A dense matrix does not have the required 1-D block structure."""


class FormatError(QsparseError, ValueError):
    """A sparse container holds inconsistent offsets/indices/values."""


class DlmcParseError(QsparseError, ValueError):
    """Malformed DLMC text input."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedPrecisionError(QsparseError, ValueError):
    """The requested (lhs_bits, rhs_bits, op) combination is not supported."""


class ShuffleStateError(QsparseError, ValueError):
    """Column indices are in the wrong shuffle state for the operation."""


class OverflowRiskError(QsparseError, ArithmeticError):
    """A computation would not fit 32-bit accumulators."""
