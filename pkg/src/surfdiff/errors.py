"""Exception hierarchy shared by all modules."""


class SurfDiffError(Exception):
    """Base class for package errors."""


class ArgumentError(SurfDiffError, ValueError):
    """Invalid argument, shape or level combination."""


class SizeLimitError(ArgumentError):
    """Requested object exceeds a resource guard."""


class NumericError(SurfDiffError, ArithmeticError):
    """A non-finite value was produced."""

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op


class StateError(SurfDiffError, RuntimeError):
    """An object is missing state required for the requested operation."""


class ParseError(SurfDiffError, ValueError):
    """Malformed file content."""


class BadMagicError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class TruncatedError(ParseError):
    pass
