"""Exception hierarchy shared by every module."""


class SketchError(Exception):
    """Base class for all errors raised by sketchsel."""


class ModelError(SketchError, ValueError):
    """Inputs violate a structural precondition (shape, symmetry, range)."""


class NumericError(SketchError, ArithmeticError):
    """A numerical procedure failed (non-PD pivot, no convergence, ...)."""


class RankDeficiencyError(NumericError):
    """A matrix that must have full rank does not.

    ``deficiency`` is the number of missing dimensions.
    """

    def __init__(self, message, deficiency=None):
        super().__init__(message)
        self.deficiency = deficiency


class GenerationError(SketchError, RuntimeError):
    """A randomized generator exhausted its retries."""
