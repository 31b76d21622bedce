"""
استثناءات التطبيق الطيفي
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class SpectralError(LabError):
    """Base exception for spectral computations."""
    pass


class PotentialError(SpectralError):
    """Raised when a potential violates W >= 0 or its support constraints."""
    pass


class SolverBracketError(SpectralError):
    """Raised when no sign change isolates the principal eigenvalue."""
    pass


class ResolutionError(SpectralError):
    """Raised when the grid is too coarse for a potential discontinuity."""
    pass


class RegimeError(SpectralError):
    """Raised when an operation needs a regime the potential does not have."""
    pass


class QuadratureError(SpectralError):
    """Raised when a normalisation integral is not finite or not positive."""
    pass


class DegenerateWronskianError(SpectralError):
    """Raised when lambda hits an eigenvalue and the Wronskian vanishes."""

    def __init__(self, message: str, wronskian: float = 0.0, **context):
        super().__init__(message, **context)
        self.wronskian = wronskian


class SingularArgumentError(SpectralError):
    """Raised when a Green function is evaluated where v1 vanishes."""
    pass
