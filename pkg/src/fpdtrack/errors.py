"""Exception types shared across the package."""


class FpdError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(FpdError, ValueError):
    pass


class NumericalError(FpdError, ArithmeticError):
    """Raised when a factorization or iteration breaks down.

    ``index`` identifies the failing block or iteration when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FitError(FpdError):
    """Non-linear fit did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class FormatError(FpdError, ValueError):
    """Input file is malformed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
