"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DomainError`` is a usage problem (2),
``NumericalError`` and its subclasses are numerical failures (3).
"""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalError(RuntimeError):
    """A numerical procedure could not complete."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed at a given leading minor."""

    def __init__(self, minor: int, message: str):
        super().__init__(message)
        self.minor = minor


class EmbeddingError(NumericalError):
    """Circulant embedding produced a negative eigenvalue."""

    def __init__(self, min_eigenvalue: float, message: str):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ZeroSurvivorError(NumericalError):
    """No sample satisfied a hard constraint, so a ratio estimate is undefined."""
