"""Exception hierarchy shared across the package.

Two families matter for the CLI exit codes: ``DataError`` (exit 2) covers
malformed inputs, ``UndefinedStatisticError`` (exit 3 under --strict-undefined)
covers computations that have no defined value for the given data.
"""


class DataError(Exception):
    """Input data is malformed: unreadable mask, palette violation, bad manifest."""


class PaletteError(DataError):
    """A pixel color has no entry in the decoding palette."""


class DimensionMismatchError(DataError):
    """Ground-truth and prediction masks disagree on width or height."""


class ManifestError(DataError):
    """The case manifest violates its schema."""


class UndefinedStatisticError(Exception):
    """A statistic is undefined for the given input (not a bug, a data condition)."""


class UnfittableRegionError(UndefinedStatisticError):
    """Region points admit no ellipse (too few, collinear, or non-elliptic fit)."""


class StructureOverlapError(UndefinedStatisticError):
    """Tangent construction impossible: the apex lies inside or on the target ellipse."""


class AopUndefinedError(UndefinedStatisticError):
    """AoP cannot be computed, e.g. a structure has no foreground."""


class TestUndefinedError(UndefinedStatisticError):
    """A hypothesis test carries no information, e.g. all paired differences are zero."""
