"""Exception hierarchy shared across the package."""


class MpsError(Exception):
    """Base class for all package errors."""


class ShapeError(MpsError, ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(MpsError, FloatingPointError):
    """A computation produced NaN or inf.

    ``where`` names the offending layer index, training step or probe.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ConvergenceError(MpsError, ArithmeticError):
    """An iterative numerical routine hit its iteration cap."""


class RankError(MpsError, ValueError):
    """A matrix that must have full rank does not."""


class UncertifiedError(MpsError, ValueError):
    """A bound was requested where its hypotheses cannot be certified."""


class UnsupportedLayerError(MpsError, TypeError):
    """Operation not defined for this layer kind."""
