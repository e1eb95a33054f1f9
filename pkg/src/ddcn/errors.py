"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1,
data and format problems exit 2, numeric failures exit 3.
"""


class DdcnError(Exception):
    """Base class for all package errors."""


class ShapeError(DdcnError):
    """Tensor shapes are inconsistent with the operation's contract."""


class GeometryError(DdcnError):
    """A layer would produce an output with a dimension < 1."""


class ConfigError(DdcnError):
    """Invalid configuration value (bad width scale, learning rate, ...)."""


class DataFormatError(DdcnError):
    """Malformed image, manifest, or other on-disk artifact."""


class CheckpointError(DataFormatError):
    """Checkpoint file is malformed or does not match the built model."""


class NumericError(DdcnError):
    """Training diverged or a numeric verification failed."""


class EmptyMaskError(DdcnError):
    """Loss evaluated on a pair with no (or too few) valid pixels."""


class DomainError(DdcnError):
    """Logarithm requested of a non-positive depth on a valid pixel."""
