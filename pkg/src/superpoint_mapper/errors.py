"""
Exception hierarchy for the mapping engine
"""

from pathlib import Path
from typing import Any


class MappingError(Exception):
    """Base class for all errors raised by superpoint_mapper"""


class InvalidDepthError(MappingError, ValueError):
    """Depth sample is zero, negative or non-finite"""


class EmptySurfaceError(MappingError, ValueError):
    """Surface carries no points"""


class EmptyMapError(MappingError):
    """Operation needs integrated geometry but the map is empty"""


class ZeroEvidenceError(MappingError, ValueError):
    """Superpoint has no semantic confidence at all"""


class MissingVertexError(MappingError, KeyError):
    """Superpoint label is not a vertex of the graph"""


class SemiMetricError(MappingError, AssertionError):
    """Pairwise potential violates the swap-move precondition"""


class UnknownCategoryError(MappingError, ValueError):
    """Category id is neither a thing nor a stuff class"""


class ConfigError(MappingError, ValueError):
    """Unknown configuration key or value out of range"""


class DatasetError(MappingError):
    """
    Dataset directory cannot be read.

    Attributes:
        path: File the error refers to
        violations: Frame validation violations, when the error stems from validation
    """

    def __init__(self, message: str, path: Path | str | None = None, violations: list[Any] | None = None):
        self.path = Path(path) if path is not None else None
        self.violations = list(violations or [])
        if self.path is not None:
            message = f"{message} ({self.path})"
        super().__init__(message)
