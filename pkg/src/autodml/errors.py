"""Exception taxonomy shared across the package.

Exit-code mapping for the command line lives in :mod:`autodml.cli`:
config errors exit 2, data errors exit 3, numeric errors exit 4.
"""

from __future__ import annotations


class AutodmlError(Exception):
    """Base class for all package errors."""


class ConfigError(AutodmlError):
    """Malformed, unknown, or inconsistent configuration."""


class ArgumentError(AutodmlError):
    """Invalid argument to a library call (bad counts, fractions, names)."""


class DataError(AutodmlError):
    """Base class for data ingestion and validation failures."""


class SchemaError(DataError):
    """Required column missing or column mapping inconsistent."""


class IngestionError(DataError):
    """Cell-level parse failure; message carries the row index."""


class ValidationError(DataError):
    """Well-formed input violating a semantic invariant."""


class ShapeError(DataError):
    """Array arguments with inconsistent shapes."""


class NumericError(AutodmlError):
    """Non-finite values or numerically degenerate intermediate results."""


class TrainingError(NumericError):
    """Training diverged; message carries stage and epoch."""


class DegenerateLeafError(NumericError):
    """Leaf system too ill-conditioned to solve."""


class EmptyTreeError(DataError):
    """Too few samples to form a tree whose root leaf is valid."""


class IncompatibilityError(AutodmlError):
    """Requested combination of learner and scheme is not supported."""
