"""Exception hierarchy shared by every module."""

from __future__ import annotations


class HeatConvError(Exception):
    """Base class for all errors raised by this package."""


class InputError(HeatConvError, ValueError):
    """Invalid arguments or data."""


class DimensionError(InputError):
    """Array shapes do not agree."""


class ConfigError(InputError):
    """Bad configuration file or value."""


class MissingFileError(InputError, FileNotFoundError):
    """A required dataset file is absent."""


class RaggedFeaturesError(InputError):
    """Feature rows have different lengths."""


class LabelRangeError(InputError):
    """A class label lies outside the valid range."""


class NodeIndexError(InputError, IndexError):
    """A node id is outside [0, N)."""


class SplitOverlapError(InputError):
    """A node appears in more than one split."""


class InconsistentPopulationError(InputError):
    """Samples of a graph population disagree on the node count."""


class CapacityError(HeatConvError):
    """The dense oracle refuses a graph above its size cap."""


class NumericalError(HeatConvError, ArithmeticError):
    """Non-finite values, overflow or non-convergence."""


class UsageError(HeatConvError, RuntimeError):
    """API misuse, e.g. a forward cache passed to the wrong model."""
