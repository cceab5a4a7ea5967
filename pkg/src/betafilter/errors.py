"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, filter or experiment configuration (bad dimensions, keys, values)."""


class NotClosedFormError(ConfigurationError):
    """The requested density power integral has no implemented closed form."""


class DegenerateWeightsError(RuntimeError):
    """Every particle weight vanished; the filter cannot continue.

    Attributes:
        time_index: step at which the weights degenerated (1-based, matching
            the observation index).
    """

    def __init__(self, time_index: int, message: str | None = None):
        self.time_index = time_index
        super().__init__(message or f"all particle weights degenerate at step {time_index}")


class DegenerateBackwardKernelError(RuntimeError):
    """All backward-kernel weights vanished during trajectory sampling."""

    def __init__(self, time_index: int):
        self.time_index = time_index
        super().__init__(f"backward kernel degenerate at step {time_index}")


class NumericalError(RuntimeError):
    """A linear-algebra step failed (e.g. non-positive-definite innovation covariance)."""

    def __init__(self, message: str, time_index: int | None = None):
        self.time_index = time_index
        if time_index is not None:
            message = f"{message} (step {time_index})"
        super().__init__(message)
