"""Exception types shared across the package.

Each class marks one failure family so callers (and the CLI exit-code
mapping) can catch precisely what they can handle.
"""


class EgmaeError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(EgmaeError, ValueError):
    """Tensor shapes incompatible with an operation; message names the axis."""


class ParameterError(EgmaeError, ValueError):
    """A hyperparameter or argument value outside its valid range."""


class TapeError(EgmaeError, RuntimeError):
    """Backward-pass contract violation (non-scalar loss, consumed tape)."""


class TilingError(EgmaeError, ValueError):
    """Image dimensions not divisible by the requested patch size."""


class RangeError(EgmaeError, ValueError):
    """Pixel values outside the expected [0, 1] range."""


class GridError(EgmaeError, ValueError):
    """Patch grid and entropy map dimensions disagree."""


class ConfigError(EgmaeError, ValueError):
    """Model configuration mismatch or invalid architecture parameters."""


class CheckpointError(EgmaeError, RuntimeError):
    """Checkpoint file unreadable: bad magic, truncation, index mismatch."""


class ManifestError(EgmaeError, ValueError):
    """Dataset manifest parse failure; message carries the line number."""


class DecodeError(EgmaeError, ValueError):
    """Image file cannot be decoded."""


class DataError(EgmaeError, ValueError):
    """Dataset-level problem: empty split, degenerate image."""


class TrainingError(EgmaeError, RuntimeError):
    """Training aborted: non-finite loss or gradient."""


class MetricError(EgmaeError, ValueError):
    """A metric is undefined for the given predictions."""


class AlignmentError(EgmaeError, ValueError):
    """Two prediction sets do not cover the same samples in the same order."""


class UsageError(EgmaeError, ValueError):
    """Command-line arguments inconsistent with each other."""
