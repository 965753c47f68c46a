"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, controller or scenario configuration."""


class ProtocolError(RuntimeError):
    """A gate agent was driven outside the sweep protocol."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
