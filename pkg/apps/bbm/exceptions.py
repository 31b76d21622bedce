"""
استثناءات الحركة البراونية المتفرعة (BBM)
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class BBMError(LabError):
    """Base exception for branching Brownian motion simulations."""
    pass


class ConfigError(BBMError):
    """Raised when a simulation configuration is invalid."""
    pass


class ExplosionError(BBMError):
    """Raised when the population exceeds the particle cap."""

    def __init__(self, message: str, size: int = 0, **context):
        super().__init__(message, size=size, **context)
        self.size = size


class BoundarySingularityError(BBMError):
    """Raised when a Green function is evaluated on the killing boundary."""
    pass


class HorizonTooShortError(BBMError):
    """Raised when the additive martingale has not settled by the horizon."""

    def __init__(self, message: str, drift: float = 0.0, **context):
        super().__init__(message, drift=drift, **context)
        self.drift = drift
