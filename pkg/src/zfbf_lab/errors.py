"""Semantic exceptions shared across the package."""


class ZfbfLabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ZfbfLabError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(DomainError):
    """Array dimensions are inconsistent or below the supported minimum."""


class DecompositionError(ZfbfLabError):
    """Matrix factorization failed (rank deficiency or singular factor)."""


class BracketingError(ZfbfLabError):
    """Root finding could not bracket a sign change."""


class ConfigError(ZfbfLabError):
    """A run configuration is invalid or outside the representable range."""


class NonConvergenceError(ZfbfLabError):
    """Quadrature exhausted its subdivision budget.

    Carries the best estimate reached and the associated error bound.
    """

    def __init__(self, message: str, best_estimate: float, error_bound: float):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_bound = error_bound
