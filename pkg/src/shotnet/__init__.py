"""Shot-transition detection with dilated factorized convolutions on numpy."""
from . import datagen, evaluation, formats, infer, kernels, net, tensor, train
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    InputError,
    ParameterError,
    ShotNetError,
    StateError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "datagen", "evaluation", "formats", "infer", "kernels", "net", "tensor", "train",
    "ConfigError", "DimensionError", "FormatError", "InputError", "ParameterError",
    "ShotNetError", "StateError", "TrainingError",
]
