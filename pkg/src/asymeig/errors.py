"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument or input violates a documented precondition."""


class NumericalConsistencyError(RuntimeError):
    """A computed quantity left its mathematically allowed range."""


class EigensolverError(RuntimeError):
    """The dense eigensolver failed to converge (hard error)."""


class MatrixMarketParseError(ValueError):
    """Malformed Matrix Market file; carries the offending line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
