"""
Exception hierarchy shared by services and the command line.

Every error subclasses a builtin (ValueError, ArithmeticError) so callers that
only know the builtin contract keep working; `install_error_handlers` in
`src.core.logging` maps them onto exit codes.
"""
from typing import Optional


class LarexError(Exception):
    """Base class for all library errors"""


class ConfigurationError(LarexError, ValueError):
    """Invalid combination of parameters or flags"""


class ContractError(LarexError, ValueError):
    """An operation was called with inputs violating its preconditions"""


class UndefinedMetricError(ContractError):
    """A metric or ratio has no defined value for the given input"""


class CapacityError(LarexError, ValueError):
    """Dense allocation or eigensolve refused because a size cap was exceeded"""

    def __init__(self, what: str, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"{what}: dimension {size} exceeds configured cap {cap}")


class EmptyDatasetError(LarexError, ValueError):
    """The input contained no usable records"""


class EmptyAfterFilterError(LarexError, ValueError):
    """Filtering removed every user or item"""


class InsufficientCellsError(ConfigurationError):
    """Not enough unobserved cells to place the requested noise"""


class NumericalError(LarexError, ArithmeticError):
    """Factorization or solve failure"""

    def __init__(self, message: str, pivot: Optional[int] = None):
        self.pivot = pivot
        super().__init__(message)


class DataFormatError(LarexError, ValueError):
    """A data file could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelFormatError(DataFormatError):
    """A persisted model or dense matrix file is corrupt or of the wrong version"""
