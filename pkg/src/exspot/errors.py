"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError and its
subclasses exit 2, NumericError exits 3.
"""


class SpottingError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SpottingError):
    """Operands have incompatible shapes; the message reports both."""


class DegenerateRowError(SpottingError):
    """A reduction saw a row with no unmasked entries."""


class NumericError(SpottingError):
    """A computation produced or received non-finite values."""


class DataError(SpottingError):
    """Invalid data: files, annotations, configs, or dataset contents."""


class TooShortVideoError(DataError):
    """Video has fewer usable frames than one snippet."""


class DurationExceededError(DataError):
    """Video produces more snippet timestamps than the fixed duration."""


class AnnotationError(DataError):
    """A ground-truth interval is malformed or out of range."""


class PackingError(DataError):
    """Synthetic interval layout does not fit in the requested frame count."""


class FormatError(DataError):
    """A binary or JSON artifact is corrupt or has the wrong version."""


class ConfigError(DataError):
    """A run configuration value or key is invalid."""


class ConfigMismatchError(DataError):
    """Checkpoint was produced under a different model configuration."""


class EmptyMaskError(DataError):
    """An operation over valid timestamps received an all-zero mask."""
