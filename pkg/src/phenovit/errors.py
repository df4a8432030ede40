"""Exception hierarchy shared across the package."""


class PhenovitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PhenovitError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(PhenovitError):
    """A configuration value is outside its allowed domain."""


class DataError(PhenovitError):
    """Input data violates a documented precondition."""


class UsageError(PhenovitError):
    """An API was called in an unsupported way."""


class GenerationError(PhenovitError):
    """Synthetic data generation could not satisfy its constraints."""


class TrainingError(PhenovitError):
    """Optimization aborted (typically on non-finite values)."""
