"""Exception types raised across the package."""


class FracDensError(Exception):
    """Base class for all package errors."""


class NegativeEigenvalue(FracDensError):
    """Circulant embedding produced an eigenvalue below the tolerance."""

    def __init__(self, min_eig: float):
        super().__init__(f"circulant embedding has negative eigenvalue {min_eig:.3e}")
        self.min_eig = min_eig


class NotPositiveDefinite(FracDensError):
    """Dense covariance factorization failed."""


class UnknownDrift(FracDensError, KeyError):
    pass


class NonFinite(FracDensError):
    """A simulated state overflowed or became NaN."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class EmptyTrajectory(FracDensError):
    pass


class InvalidRegime(FracDensError, ValueError):
    pass


class InsufficientPoints(FracDensError):
    pass


class NonPositiveValue(FracDensError, ValueError):
    pass


class BudgetTooSmall(FracDensError):
    """Split-half oracle disagreement exceeded the tolerance."""

    def __init__(self, diff: float, tol: float):
        super().__init__(f"split-half oracle difference {diff:.3e} exceeds {tol:.3e}")
        self.diff = diff
        self.tol = tol


class Nonconvergence(FracDensError):
    pass


class ConfigError(FracDensError, ValueError):
    pass
