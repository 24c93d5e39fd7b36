"""Exception types shared across the package."""


class RnntDistillError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RnntDistillError, ValueError):
    """An input tensor violates a basic invariant (non-finite entries, bad rank)."""


class InvalidLabelError(RnntDistillError, ValueError):
    """A label sequence contains ids outside [1, K-1] or has the wrong length."""


class InvalidParameterError(RnntDistillError, ValueError):
    """A scalar parameter is outside its legal range."""


class IncompatibleShapeError(RnntDistillError, ValueError):
    """Two tensors that must agree in shape do not."""


class IncompatibleModelError(RnntDistillError, ValueError):
    """Teacher and student models disagree on the vocabulary."""


class CapacityError(RnntDistillError, ValueError):
    """An enumeration guard was exceeded."""


class TensorFormatError(RnntDistillError, ValueError):
    """A tensor file is malformed or truncated."""


class ConfigError(RnntDistillError, ValueError):
    """A config file contains unknown keys or unparsable values."""


class TrainingFailureError(RnntDistillError, RuntimeError):
    """Training produced a non-finite loss; the message names the step."""
