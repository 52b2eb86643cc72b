"""Exception types shared across the library.

Everything user-facing derives from :class:`XVitError` so callers can catch
one base class. Most shape/config problems also subclass ``ValueError`` to
stay friendly to generic numpy-style error handling.
"""


class XVitError(Exception):
    """Base class for all errors raised by this library."""


class ShapeError(XVitError, ValueError):
    """Operand shapes are incompatible; message names the offending shapes."""


class RankError(ShapeError):
    """Operand has the wrong number of dimensions."""


class AxisError(ShapeError):
    """Axis index out of range for the operand's rank."""


class NumericError(XVitError, ArithmeticError):
    """Non-finite input where a finite one is required (e.g. NaN into softmax)."""


class ConfigError(XVitError, ValueError):
    """Invalid model / attention configuration (e.g. channels not divisible by heads)."""


class TapeError(XVitError, RuntimeError):
    """Tape misuse: backward without a recording, or a consumed tape reused."""


class CheckpointError(XVitError, ValueError):
    """Checkpoint file is malformed, truncated, or inconsistent with its header."""


class DataError(XVitError, ValueError):
    """Benchmark/fit input data violates a precondition (e.g. non-positive values)."""


class TrainingDivergedError(XVitError, RuntimeError):
    """Training produced a NaN loss; carries the epoch where it happened."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (NaN loss) at epoch {epoch}")
