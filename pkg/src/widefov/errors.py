"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is inconsistent with the model or data."""


class StateError(RuntimeError):
    """An operation needs state (parameters, checkpoint) that is not loaded."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id
