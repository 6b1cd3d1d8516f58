"""
Error hierarchy for fbkws.

Value-type problems subclass ValueError so callers can catch either the
package error or the builtin.
"""

from typing import Optional


class FbkwsError(Exception):
    """Root of every error raised by this package."""


class ConfigError(FbkwsError, ValueError):
    """Missing or invalid configuration key."""


class DatasetError(FbkwsError):
    """Fatal dataset problem, e.g. a missing corpus root."""


class ClipError(FbkwsError, ValueError):
    """A single audio file could not be turned into a clip."""


class SplitError(FbkwsError, ValueError):
    """Speaker split cannot be built from the given clips."""


class ShapeError(FbkwsError, ValueError):
    """Operand shapes are incompatible."""


class TapeError(FbkwsError, RuntimeError):
    """Reverse pass requested on a missing or already consumed tape."""


class StateError(FbkwsError, RuntimeError):
    """Layer state used before it was initialized."""


class CheckpointError(FbkwsError, ValueError):
    """Checkpoint file is malformed or does not match the model."""


class ExperimentNameError(FbkwsError, ValueError):
    """Experiment name does not follow the regime grammar."""

    def __init__(self, message: str, name: str, position: int):
        super().__init__(f"{message} at position {position} in {name!r}")
        self.name = name
        self.position = position


class TrialError(FbkwsError, RuntimeError):
    """A repetition of an experiment failed."""

    def __init__(self, message: str, seed: int, cause: Optional[BaseException] = None):
        super().__init__(f"trial with seed {seed} failed: {message}")
        self.seed = seed
        self.cause = cause
