"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input violates a documented precondition (bad parameter, bad shape)."""


class NumericalError(RuntimeError):
    """An iterative numerical routine failed to converge within its cap."""


class TrainingError(RuntimeError):
    """Training diverged; carries the epoch index where the loss went non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class LoadError(ValueError):
    """A data file could not be parsed; names the offending row/column."""


class ConfigError(ValueError):
    """A run configuration is internally inconsistent or malformed."""
