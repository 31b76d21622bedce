"""
استثناءات منصة التجارب
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class HarnessError(LabError):
    """Base exception for experiment orchestration."""
    pass


class ValidationError(HarnessError, ValueError):
    """Raised when an experiment file does not validate."""
    pass


class UnknownExperimentError(HarnessError, KeyError):
    """Raised when an experiment name is not in the catalog."""

    def __str__(self) -> str:
        return HarnessError.__str__(self)


class OutputPathError(HarnessError):
    """Raised when the report directory cannot be created or written."""
    pass
