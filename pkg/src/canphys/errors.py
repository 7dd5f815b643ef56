"""Exception types shared across the package."""


class CanphysError(Exception):
    """Base class for all canphys errors."""


class ConfigError(CanphysError, ValueError):
    """Invalid configuration (bad key, bad value, missing seed). CLI exit 2."""


class DataError(CanphysError, ValueError):
    """Invalid or degenerate data (shape mismatch, corrupt file, zero
    variance where variance is required). CLI exit 3."""


class NonFiniteGradientError(CanphysError, RuntimeError):
    """Raised when a training step produces NaN/Inf gradients."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(
            "non-finite gradient in parameters: " + ", ".join(self.names))
