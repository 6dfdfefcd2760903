"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a spec/config object is inconsistent or out of range."""


class TrainingError(RuntimeError):
    """Raised when iterative training produces non-finite values.

    Carries ``stage`` (optional), ``epoch`` and ``loss`` attributes for
    diagnostics.
    """

    def __init__(self, message, *, stage=None, epoch=None, loss=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.loss = loss


class OptimizationError(RuntimeError):
    """Raised when every optimizer start produced non-finite values."""

    def __init__(self, message, *, traces=None):
        super().__init__(message)
        self.traces = traces


class ExperimentError(RuntimeError):
    """Raised when a Monte Carlo experiment exceeds the failure budget."""
