"""Pit-pattern classification of synthetic tactile polyp images.

Numpy implementation of a dilated residual classifier, a bounded adaptive
optimizer, a phantom image generator, and the cross-validation harness
tying them together.
"""

__version__ = "0.1.0"

from .config import RunConfig, derive_seed, make_run_config
from .errors import (CheckpointFormatError, CheckpointMismatchError,
                     ConfigError, DataError, NumericError, PitnetError,
                     ShapeError, StateError)
from .network import ModelConfig, build_model

__all__ = [
    "RunConfig", "derive_seed", "make_run_config",
    "ModelConfig", "build_model",
    "PitnetError", "ShapeError", "NumericError", "ConfigError", "DataError",
    "CheckpointFormatError", "CheckpointMismatchError", "StateError",
    "__version__",
]
