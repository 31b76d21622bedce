"""
استثناءات عمليات التفرع ذات الحالة المستمرة (CSBP)
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class CSBPError(LabError):
    """Base exception for CSBP computations."""
    pass


class DomainError(CSBPError, ValueError):
    """Raised when psi is evaluated at a negative argument."""
    pass


class NoExtinctionError(CSBPError):
    """Raised when Grey's condition fails and u_bar is not finite."""
    pass


class TruncationError(CSBPError):
    """Raised when the offspring law keeps too much mass beyond K_max."""

    def __init__(self, message: str, tail: float = 0.0, **context):
        super().__init__(message, tail=tail, **context)
        self.tail = tail


class UnsupportedFunctionalError(CSBPError):
    """Raised for functionals the moment recursion does not cover."""
    pass


class CombinatorialBlowupError(CSBPError):
    """Raised when unplanarization would sum over too many permutations."""
    pass


class EmptyPopulationError(CSBPError):
    """Raised when a genealogy is requested at a time with no living particle."""
    pass


class MomentError(CSBPError):
    """Raised when the jump measure has no finite moment of the needed order."""
    pass
