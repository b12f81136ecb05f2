"""Exception hierarchy for the Latent-IMH toolkit"""

from typing import Optional


class LatentImhError(Exception):
    """Base class for every error raised by the toolkit"""


class DimensionMismatchError(LatentImhError, ValueError):
    """A vector or map does not have the length an operation expects"""

    def __init__(self, what: str, expected: int, actual: int):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class SingularOperatorError(LatentImhError, ValueError):
    """An operator that must be invertible is numerically singular"""


class SolverError(LatentImhError, RuntimeError):
    """An iterative solve stopped before reaching its tolerance"""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class UnsupportedVariantError(LatentImhError, ValueError):
    """The requested variant does not apply to this problem or prior"""


class TargetUnreachableError(LatentImhError, ValueError):
    """A generator cannot hit the requested target value"""


class InsufficientSamplesError(LatentImhError, ValueError):
    """A metric needs more samples than were given"""


class ConfigError(LatentImhError, ValueError):
    """An experiment config violates its schema"""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"Invalid config field '{field}': {reason}")


class ExperimentError(LatentImhError, RuntimeError):
    """An experiment run failed after the config was accepted"""

    def __init__(self, message: str, cause: Optional[BaseException] = None):
        self.cause = cause
        super().__init__(message)
