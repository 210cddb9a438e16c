class ConfigurationError(ValueError):
    """Invalid network, dataset, corruption or experiment configuration."""


class IngestionError(ValueError):
    """A dataset file is missing or malformed."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient contains NaN or Inf; carries a diagnostic dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class SchemaError(ValueError):
    """A run record or comparison input does not match the expected schema."""
