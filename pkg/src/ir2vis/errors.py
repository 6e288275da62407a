"""Exception hierarchy shared by every ir2vis module."""


class Ir2visError(Exception):
    """Base class for all library errors."""


class DimensionError(Ir2visError, ValueError):
    """Tensor shapes or axes do not line up."""


class ContractError(Ir2visError, ValueError):
    """A call violated a documented precondition."""


class TapeError(Ir2visError, RuntimeError):
    """Backward requested for something that was never recorded."""


class OptimizerError(Ir2visError, FloatingPointError):
    def __init__(self, name, message):
        super().__init__(f"parameter {name!r}: {message}")
        self.name = name


class ValidationError(Ir2visError, ValueError):
    """Input data does not satisfy a schema or invariant."""


class SpecError(ValidationError):
    """A ModelSpec cannot be built for the requested input."""


class ConfigError(Ir2visError, ValueError):
    """Inconsistent run or training configuration."""


class DegenerateMaskError(Ir2visError, ValueError):
    """Every SSIM window was masked out, so the spatial mean is undefined."""


class DivergenceError(Ir2visError, RuntimeError):
    """Training was aborted by a divergence guard."""


class CheckpointError(Ir2visError, ValueError):
    """A checkpoint does not match the model it is loaded into."""
