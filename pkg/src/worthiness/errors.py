"""Domain error types shared across the toolkit.

Every loader, numeric routine, and service raises one of these instead of a
bare ValueError so callers (and the CLI) can map failures to stable names.
"""


class WorthinessError(Exception):
    """Base class for all domain errors."""


class SchemaError(WorthinessError):
    """A file is missing required columns/fields or is structurally malformed."""


class DuplicateEntry(WorthinessError):
    """The same key appears more than once in a table."""


class InvalidValue(WorthinessError):
    """A value is non-finite, out of range, or otherwise not admissible."""


class DimensionError(WorthinessError):
    """A vector width does not match the corpus declaration."""


class UnknownImage(WorthinessError):
    """An image id is referenced but not present where required."""


class UnknownModel(WorthinessError):
    """A model id is referenced but not present in the table."""


class InsufficientLevelSet(WorthinessError):
    """A quality-level bin is too small to host an image pair."""


class DegenerateVariance(WorthinessError):
    """Both variances of a comparison are zero."""


class ShapeError(WorthinessError):
    """Sequence lengths do not match."""


class UndefinedCorrelation(WorthinessError):
    """Rank correlation is undefined (a constant sequence)."""


class NoConvergence(WorthinessError):
    """An iterative solver hit its iteration cap.

    Carries the last iterate and residual for postmortem use.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class EmptyTrainingSet(WorthinessError):
    """No (or too few) labeled examples to fit a model."""


class EmptySelectionPool(WorthinessError):
    """A selector was handed an empty candidate pool."""


class BudgetExceedsPool(WorthinessError):
    """Requested more selections than the pool holds."""


class RaggedEnsemble(WorthinessError):
    """Ensemble member counts differ across images."""


class UnknownPairSet(WorthinessError):
    """A study pair set id does not exist."""


class UnknownSession(WorthinessError):
    """A study session id does not exist."""


class DuplicateResponse(WorthinessError):
    """A pair already has a response with a different response id."""


class InvalidPair(WorthinessError):
    """A pair index or choice is outside the session's schedule."""
