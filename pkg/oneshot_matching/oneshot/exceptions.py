"""
Error hierarchy shared by the library and the management commands.

Each error carries the process exit code the CLI uses when it escapes a
command, so config, data-format, leakage and divergence failures are
distinguishable from the shell.
"""
from typing import Iterable, Optional


class OneShotError(Exception):
    exit_code = 1


class InvalidInputError(OneShotError, ValueError):
    """An operation received arguments outside its domain."""

    exit_code = 2


class ConfigError(OneShotError):
    exit_code = 2


class DataFormatError(OneShotError):
    """
    A file on disk does not follow its declared format.

    Args:
        message (str): What went wrong.
        offset (int, optional): Byte offset where decoding failed.
    """

    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConsistencyError(DataFormatError):
    """Two files that must agree (e.g. images and labels) do not."""


class CheckpointError(DataFormatError):
    """A parameter checkpoint is unreadable or belongs to another network spec."""


class LeakageError(OneShotError):
    """Background and one-shot data share classes."""

    exit_code = 4

    def __init__(self, message: str, classes: Iterable[int] = ()) -> None:
        self.classes = sorted(set(classes))
        if self.classes:
            message = f"{message}: {self.classes}"
        super().__init__(message)


class TrainingDivergedError(OneShotError):
    exit_code = 5


class SamplingError(OneShotError):
    """
    An episode could not be sampled.

    Args:
        constraint (str): Name of the violated sampling constraint.
        message (str): Details.
    """

    exit_code = 6

    def __init__(self, constraint: str, message: str) -> None:
        self.constraint = constraint
        super().__init__(f"cannot satisfy '{constraint}': {message}")
