"""Exception types shared across the package."""
import numpy as np


class ConfigError(ValueError):
    """Invalid experiment or chain configuration."""


class NumericalError(RuntimeError):
    """A factorization or solve that could not be completed."""


class FactorizationError(NumericalError, np.linalg.LinAlgError):
    """Cholesky factorization failed even after a jitter retry.

    Attributes
    ----------
    pivot : float
        Value of the first non-positive pivot of the jittered matrix.
    index : int
        Zero-based position of that pivot.
    """

    def __init__(self, message, pivot=float("nan"), index=-1):
        super().__init__(f"{message} (pivot {pivot:.3e} at index {index})")
        self.pivot = pivot
        self.index = index


class SolverError(NumericalError):
    """Linear solve did not reach the requested residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual
