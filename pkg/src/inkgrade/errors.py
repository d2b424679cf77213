"""Exception types shared across the pipeline.

File-system problems use the builtin ``OSError``; everything else derives
from :class:`InkgradeError` so callers can catch pipeline failures in one
place (the batch runner relies on this to soft-fail individual sheets).
"""


class InkgradeError(Exception):
    """Base class for all inkgrade-specific failures."""


class FormatError(InkgradeError):
    """A file exists but is not in the expected format."""


class OutOfBoundsError(InkgradeError):
    """A bounding box does not lie inside its parent image."""


class NoContentError(InkgradeError):
    """A sheet contains no detectable answer blocks."""


class GridNotFoundError(InkgradeError):
    """A block does not contain a detectable ruled grid."""


class UnknownLabelError(InkgradeError):
    """A glyph label is not part of the atlas alphabet."""


class SheetSpecError(InkgradeError):
    """A sheet spec is internally inconsistent (e.g. text longer than grid)."""


class ShapeMismatchError(InkgradeError):
    """Tensor or image dimensions do not match the model's expectation."""


class DivergenceError(InkgradeError):
    """Training produced a non-finite loss."""


class AlphabetMismatchError(InkgradeError):
    """Model and dataset disagree on the label alphabet."""


class EmptyCorpusError(InkgradeError):
    """An n-gram corpus contains no sentences."""


class DegenerateCountsError(InkgradeError):
    """Count tables are empty; no model can be estimated."""


class EmptyLatticeError(InkgradeError):
    """A candidate lattice has no positions."""


class UndefinedKappaError(InkgradeError):
    """The expected-disagreement mass is zero with observed disagreement."""


class EmptyReferenceError(InkgradeError):
    """Character accuracy requires a non-empty reference."""


class TooFewItemsError(InkgradeError):
    """Not enough items to build a train/val/test split."""


class ConfigError(InkgradeError):
    """A pipeline configuration file is malformed or has unknown keys."""
