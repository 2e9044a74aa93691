"""Exception hierarchy shared across the package.

``ConfigError`` marks usage/configuration problems (CLI exit code 2),
``DataError`` and its subclasses mark bad data or violated preconditions
(CLI exit code 3).
"""


class UnmixError(Exception):
    """Base class for all package errors."""


class ConfigError(UnmixError):
    """Malformed or missing configuration."""


class DataError(UnmixError):
    """Invalid data or violated precondition."""


class ShapeMismatch(DataError):
    """Array dimensions are inconsistent."""


class NonFinite(DataError):
    """NaN or Inf encountered where finite values are required."""


class SimplexViolation(DataError):
    """Abundance vector has negative entries or does not sum to one."""


class EmptyTrainingSet(DataError):
    """No training samples available."""


class EmptyTestSet(DataError):
    """No test samples available."""


class EmptyDataset(DataError):
    """Dataset would contain no samples."""


class NotDivisible(DataError):
    """Raster dimensions are not divisible by the aggregation factor."""


class AllNoData(DataError):
    """Every raster cell is NO_DATA."""


class AlignmentMismatch(DataError):
    """Grids that must share a coarse shape do not."""


class TooFewBlocks(DataError):
    """A block split needs at least two distinct blocks."""
