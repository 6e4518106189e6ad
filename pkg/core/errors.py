"""
Exception hierarchy for erft-lab.
"""
from typing import Optional


class ErftError(Exception):
    """Base class for every error raised by the library."""


class InvalidArgumentError(ErftError, ValueError):
    """An operation received an argument outside its domain."""


class TrainingDivergedError(ErftError, ArithmeticError):
    """Loss or gradients became non-finite during training."""


class SamplingDivergedError(ErftError, ArithmeticError):
    """An Euler integration state became non-finite."""

    def __init__(self, message: str, clip_index: Optional[int] = None):
        if clip_index is not None:
            message = f"clip {clip_index}: {message}"
        super().__init__(message)
        self.clip_index = clip_index


class EmptyBankError(ErftError, LookupError):
    """Sampling was requested from an error grid that holds no entries."""


class SnapshotFormatError(ErftError, ValueError):
    """A checkpoint or bank snapshot file is corrupt or truncated."""


class ConfigError(ErftError, ValueError):
    """Invalid run configuration; `key` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ReportParseError(ErftError, ValueError):
    """A metrics CSV row could not be parsed."""

    def __init__(self, path: str, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class OutputExistsError(ErftError, FileExistsError):
    """A run tried to overwrite an output that already exists."""


class CheckpointNotFoundError(ErftError, FileNotFoundError):
    """A rollout was asked to load a checkpoint that does not exist."""
