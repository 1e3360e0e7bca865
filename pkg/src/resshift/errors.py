"""Exception types shared across the toolkit.

Every error raised on a contract violation derives from ResShiftError so
callers can catch toolkit failures in one clause; the CLI maps them to
exit codes (2 for usage/config problems, 3 for training divergence).
"""


class ResShiftError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(ResShiftError, ValueError):
    """A scalar parameter or configuration field is out of its domain."""


class ShapeError(ResShiftError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class StepError(ResShiftError, ValueError):
    """Timestep index outside 1..T."""


class UndefinedWeightError(ResShiftError, ValueError):
    """The per-step loss weight is undefined (t=1 divides by eta_0 = 0)."""


class DegenerateDistributionError(ResShiftError, ValueError):
    """A Gaussian with zero variance was used where positive variance is required."""


class TrainingDivergenceError(ResShiftError, RuntimeError):
    """A non-finite loss or gradient appeared during optimization."""


class ParseError(ResShiftError, ValueError):
    """A file could not be decoded; `offset` is the failing byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RangeError(ResShiftError, ValueError):
    """Pixel values outside the encodable [0, 1] range."""


class CorruptCheckpointError(ResShiftError, ValueError):
    """Checkpoint file failed structural validation."""


class ConfigConflictError(ResShiftError, ValueError):
    """Checkpoint contents disagree with the supplied configuration."""
