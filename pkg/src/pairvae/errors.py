"""Exception types shared across the package."""


class PairVAEError(Exception):
    """Base class for all package errors."""


class ShapeError(PairVAEError, ValueError):
    """An array/tensor dimension does not match what an operation expects."""


class ContractError(PairVAEError, ValueError):
    """A call violates a documented precondition."""


class DataFormatError(PairVAEError, ValueError):
    """An on-disk dataset or checkpoint is malformed or inconsistent."""


class NumericError(PairVAEError, ArithmeticError):
    """A computation produced NaN/Inf where finite values are required."""
