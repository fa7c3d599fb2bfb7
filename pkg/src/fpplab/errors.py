"""Exception types shared across the package."""


class FPPError(Exception):
    """Base class for all fpplab errors."""


class InvalidArgument(FPPError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidState(FPPError, RuntimeError):
    """An object was used in a state that does not permit the operation."""


class DataError(FPPError, IOError):
    """A file could not be read, written or parsed."""


class NumericFailure(FPPError, ArithmeticError):
    """A computation produced non-finite values."""
