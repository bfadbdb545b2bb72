"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1, data and
file problems exit 2, numeric failures exit 3.
"""


class PitnetError(Exception):
    """Base class for all package errors."""


class ShapeError(PitnetError):
    """Tensor shapes, channel counts, or label values do not line up."""


class NumericError(PitnetError):
    """Non-finite values, degenerate statistics, or a diverged computation."""


class ConfigError(PitnetError):
    """A run or model configuration is malformed or out of range."""


class DataError(PitnetError):
    """Manifest, image, sampling, or stratification problem."""


class CheckpointFormatError(PitnetError):
    """Checkpoint bytes do not parse (bad magic, version, or truncation)."""


class CheckpointMismatchError(PitnetError):
    """Strict checkpoint load against a model with different tensors."""


class StateError(PitnetError):
    """Operation called out of order (e.g. backward before forward)."""
