"""Exception types shared across the package."""

import numpy as np


class ParameterError(ValueError):
    """A numeric parameter lies outside its admissible domain."""


class DimensionError(ValueError):
    """Array shapes are inconsistent."""


class DomainError(ValueError):
    """A value is not a member of the required discrete set."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Cholesky factorization met a non-positive pivot.

    ``pivot`` is the 0-based index of the failing diagonal entry.
    """

    def __init__(self, pivot, batch_index=None):
        self.pivot = pivot
        self.batch_index = batch_index
        where = "" if batch_index is None else f" (batch entry {batch_index})"
        super().__init__(f"non-positive pivot at index {pivot}{where}")


class ConfigError(ValueError):
    """Invalid run configuration or model file."""


class NumericsError(RuntimeError):
    """Training produced a non-finite quantity."""
