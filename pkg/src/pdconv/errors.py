"""Exception hierarchy shared by all pdconv modules."""


class PdconvError(Exception):
    """Base class for all pdconv errors."""


class DimensionError(PdconvError):
    """Tensor shapes are inconsistent; the message names the offending axis."""


class ConfigurationError(PdconvError):
    """Invalid operator or run configuration (e.g. even kernel size)."""


class ContractError(PdconvError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class NumericError(PdconvError):
    """Non-finite values were produced; the message identifies the op."""


class DataError(PdconvError):
    """Invalid data content (e.g. out-of-range label at a pixel)."""


class FormatError(PdconvError):
    """A binary file is corrupted, truncated, or has the wrong magic."""


class TrainingDiverged(PdconvError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"loss is not finite at iteration {iteration}")
