"""Exception types raised across the package."""

import numpy as np


class BranchError(ValueError):
    """Logarithm requested at a rotation angle of pi, where it is not unique."""


class SingularMeasurementError(ValueError):
    """Bearing-type measurement Jacobian requested at zero relative position."""


class UnknownLandmarkError(KeyError):
    pass


class DuplicateLandmarkError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Innovation covariance too ill-conditioned to invert safely."""

    def __init__(self, condition, message=None):
        self.condition = float(condition)
        super().__init__(
            message or f"innovation covariance condition number {self.condition:.3e} exceeds guard"
        )


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class ConfigError(ValueError):
    """Invalid experiment configuration or malformed record file."""
