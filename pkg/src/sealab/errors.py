class ValidationError(ValueError):
    """Raised when a config, pose, or input file fails validation."""


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a NaN or infinite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
