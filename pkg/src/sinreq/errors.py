"""Exception types shared across the package."""


class SinreqError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SinreqError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ParameterError(SinreqError, ValueError):
    """A scalar argument or spec field is outside its valid domain."""


class ConfigError(SinreqError, ValueError):
    """An experiment or regularizer configuration is inconsistent."""


class NonFiniteError(SinreqError, FloatingPointError):
    """An operation produced NaN or Inf; results are never left in this state."""


class DegenerateScaleError(SinreqError, ValueError):
    """A data-dependent normalizer (max |tanh w|) is zero, so the quantizer is undefined."""


class DivergenceError(SinreqError, RuntimeError):
    """Training produced a non-finite loss or parameter.

    Carries the optimizer step at which divergence was detected; `fit` attaches
    the records collected so far in `records`.
    """

    def __init__(self, step, message="non-finite value during training"):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.records = []


class IdxParseError(SinreqError, ValueError):
    """An IDX file failed to parse; `field` names the offending part of the format."""

    def __init__(self, field, message):
        super().__init__(message)
        self.field = field


class CheckpointError(SinreqError, ValueError):
    """A checkpoint file is malformed or does not match the model."""
