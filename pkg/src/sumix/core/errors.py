"""
Exception hierarchy for sumix.

Every error raised on purpose by the package derives from SumixError. Most
also derive from a builtin exception so callers that only know about
ValueError or RuntimeError keep working.
"""

from pathlib import Path
from typing import Optional


class SumixError(Exception):
    """Base class for all sumix errors."""


class InvalidParameterError(SumixError, ValueError):
    """A numeric parameter is outside its valid range."""


class ShapeMismatchError(SumixError, ValueError):
    """Tensors that must agree in shape do not."""


class InvalidLabelError(SumixError, ValueError):
    """Labels are outside [0, K) or have the wrong layout."""


class UnsupportedArchitectureError(SumixError, ValueError):
    """The requested operation needs a different encoder architecture."""


class DisconnectedLossError(SumixError, RuntimeError):
    """A loss has a gradient graph that reaches none of the model parameters."""


class ConfigError(SumixError, ValueError):
    """Invalid configuration."""

    def __init__(self, message: str, fields: Optional[list[str]] = None):
        super().__init__(message)
        self.fields = fields or []


class DataError(SumixError):
    """A dataset or manifest could not be used."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class DataFormatError(DataError, ValueError):
    """A CIFAR record file is malformed."""

    def __init__(self, message: str, path: Path, offset: int):
        super().__init__(f"{message} ({path}, byte offset {offset})")
        self.path = path
        self.offset = offset


class NumericalAbortError(SumixError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, step: int, checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint
