"""Exception hierarchy shared by all shotnet modules."""


class ShotNetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ShotNetError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ParameterError(ShotNetError, ValueError):
    """An operation hyper-parameter is out of its valid range."""


class InputError(ShotNetError, ValueError):
    """Input data violates an operation precondition."""


class StateError(ShotNetError, RuntimeError):
    """An object is used in the wrong lifecycle state."""


class FormatError(ShotNetError, ValueError):
    """A binary or text container is malformed."""


class ConfigError(ShotNetError, ValueError):
    """Configuration validation failed; ``problems`` lists every bad field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class TrainingError(ShotNetError, RuntimeError):
    """Training aborted, e.g. because the loss became non-finite."""
