"""Exception types raised across the package."""

import numpy as np


class ValidationError(ValueError):
    """Input failed a structural or range check."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix required to be positive definite is not."""


class DimensionCapError(ValueError):
    """Dense construction refused because it would exceed the size cap."""


class RankDeficientError(np.linalg.LinAlgError):
    """Regression design matrix does not have full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateCloudError(RuntimeError):
    """All particle weights vanished."""


class LikelihoodError(RuntimeError):
    """Likelihood evaluation failed for a parameter value."""

    def __init__(self, message, rho=None):
        super().__init__(message)
        self.rho = rho


class GenerationCapError(RuntimeError):
    """Tempering did not reach the target within the generation cap."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
