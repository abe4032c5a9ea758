"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """An operation was called with out-of-contract arguments."""


class TrainingError(RuntimeError):
    """Model or policy training failed or produced an unacceptable result."""


class StateError(RuntimeError):
    """An object was used before it was put into the required state."""


class GpFitError(RuntimeError):
    """Gaussian-process fitting failed (singular kernel after jitter escalation)."""


class DatasetLoadError(ValueError):
    """A persisted dataset failed validation; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(ValueError):
    """A run-configuration file is malformed or contains unknown keys."""
