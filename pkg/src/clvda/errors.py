"""Exception types raised by the library."""


class ClvdaError(Exception):
    """Base class for all library errors."""


class ValidationError(ClvdaError, ValueError):
    """An input violates a documented precondition."""


class BlowUpError(ClvdaError, FloatingPointError):
    """Integration produced non-finite values (usually a step that is too large)."""


class RankCollapseError(ClvdaError, ArithmeticError):
    """A tangent frame lost full column rank during re-orthonormalization."""


class FilterError(ClvdaError):
    """The analysis step could not be carried out (e.g. singular innovation covariance)."""
