"""Exception types shared across the package."""


class DeepDisasterError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DeepDisasterError, ValueError):
    """Raised for unparseable config files or invariant violations."""


class DataError(DeepDisasterError, ValueError):
    """Raised for unusable dataset layouts or undecodable images."""


class CheckpointError(DeepDisasterError, RuntimeError):
    """Raised for missing, corrupt, or role-mismatched checkpoints."""


class TrainingAbort(DeepDisasterError, RuntimeError):
    """Raised when training hits a non-finite loss with no usable checkpoint."""

