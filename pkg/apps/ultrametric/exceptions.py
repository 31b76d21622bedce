"""
استثناءات المصفوفات فوق المترية
BRLab - Branching Genealogy Laboratory
"""

from apps.core.exceptions import LabError


class UltrametricError(LabError, ValueError):
    """Base exception for planar ultrametric matrices."""
    pass


class AsymmetryError(UltrametricError):
    """Raised when U is not symmetric."""

    def __init__(self, message: str, i: int = -1, j: int = -1, **context):
        super().__init__(message, i=i, j=j, **context)
        self.i = i
        self.j = j


class NonZeroDiagonalError(UltrametricError):
    """Raised when a diagonal entry is not zero."""
    pass


class PlanarityViolationError(UltrametricError):
    """Raised when U_ij != max(U_il, U_lj) for some i < l < j."""

    def __init__(self, message: str, triple=(), **context):
        super().__init__(message, triple=triple, **context)
        self.triple = tuple(triple)


class NestingError(UltrametricError):
    """Raised when a submatrix is not strictly shallower than the root depth."""
    pass


class FunctionalSpecError(UltrametricError):
    """Raised when a functional tree is inconsistent with its composition."""
    pass
