"""
استثناءات العمود الفقري وقياسات k-spine
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class SpineError(LabError):
    """Base exception for spine computations."""
    pass


class SpineConfigError(SpineError):
    """Raised when a spine configuration or its arguments are invalid."""
    pass


class InconsistentEstimateError(SpineError):
    """Raised when two independent estimators of the same quantity disagree."""

    def __init__(self, message: str, z_score: float = 0.0, **context):
        super().__init__(message, z_score=z_score, **context)
        self.z_score = z_score
