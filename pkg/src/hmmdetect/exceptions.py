"""Exception types raised across the package."""


class ValidationError(ValueError):
    """A model, scenario or configuration violates its invariants."""


class SizeGuardError(ValueError):
    """An exact computation was requested on an instance that is too large."""


class NumericDegeneracyError(ArithmeticError):
    """A normalizing constant collapsed to zero or a particle system died out."""


class EstimationError(RuntimeError):
    """A Monte Carlo estimator produced no usable samples."""


class DriftError(RuntimeError):
    """A walk failed to make upward progress within its step cap."""


class PoissonResidualError(RuntimeError):
    """The estimated Poisson-equation solution fails its residual check.

    The offending estimate is attached as ``estimate`` so callers can still
    inspect per-state residuals.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DomainError(ValueError):
    """An input lies outside the domain where a formula is defined."""


class SuspiciousModelWarning(UserWarning):
    """An estimate contradicts a property the model pair should have."""
