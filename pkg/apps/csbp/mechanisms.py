"""
آليات التفرع ψ ومقاييس القفز
BRLab - Branching Genealogy Laboratory

ψ(θ) = bθ + (d/2)θ² + ∫(e^{−θx} − 1 + θx)Λ(dx)

أنواع القفز:
- AlphaStable: ψ_J(θ) = Cθ^α (بدون عزوم منتهية)
- CutoffStable: Λ_A = A^{−α}·(دفع Λ₀ بالتحجيم x ↦ Ax)، عزومها m_{p,A} = A^{p−α}∫x^pΛ₀
- Tabulated: ذرات (x_i, w_i)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special, stats

from .exceptions import CSBPError, DomainError, MomentError

SERIES_CUTOFF = 1e-2


def _compensated(z):
    """e^{−z} − 1 + z بدقة كاملة قرب الصفر."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_CUTOFF
    series = z * z * (0.5 - z * (1.0 / 6.0 - z * (1.0 / 24.0 - z / 120.0)))
    return np.where(small, series, np.expm1(-z) + z)


# ========== Base measures ==========

@dataclass(frozen=True)
class LebesgueOn01:
    """المقياس Λ₀ = Lebesgue على [0,1]."""

    name = 'lebesgue'

    def moment(self, p: float) -> float:
        return 1.0 / (p + 1.0)

    def laplace(self, c):
        """I(c) = ∫₀¹(e^{−cy} − 1 + cy)dy."""
        c = np.asarray(c, dtype=float)
        small = c < SERIES_CUTOFF
        safe = np.where(small, 1.0, c)
        series = c * c * (1.0 / 6.0 - c * (1.0 / 24.0 - c * (1.0 / 120.0 - c / 720.0)))
        return np.where(small, series, -np.expm1(-safe) / safe - 1.0 + 0.5 * safe)

    def laplace_derivative(self, c):
        """I′(c) = ∫₀¹ y(1 − e^{−cy})dy."""
        c = np.asarray(c, dtype=float)
        small = c < SERIES_CUTOFF
        safe = np.where(small, 1.0, c)
        series = c * (1.0 / 3.0 - c * (1.0 / 8.0 - c * (1.0 / 30.0 - c / 144.0)))
        exact = 0.5 - (-np.expm1(-safe) - safe * np.exp(-safe)) / (safe * safe)
        return np.where(small, series, exact)

    def poisson_mass(self, c: float, i_max: int) -> np.ndarray:
        """∫₀¹ e^{−cy}(cy)^i/i! dy = P(i+1, c)/c لكل i = 2..i_max."""
        i = np.arange(2, i_max + 1)
        return special.gammainc(i + 1.0, c) / c

    def to_dict(self) -> Dict[str, Any]:
        return {'type': self.name}


@dataclass(frozen=True)
class AtomicMeasure:
    """مقياس ذري Σ w_i δ_{x_i}."""
    xs: Tuple[float, ...]
    ws: Tuple[float, ...]

    name = 'atoms'

    def __post_init__(self):
        if len(self.xs) != len(self.ws) or not self.xs:
            raise CSBPError('Atoms need matching positions and weights')
        if any(x <= 0 for x in self.xs) or any(w < 0 for w in self.ws):
            raise CSBPError('Atoms need positive positions and non-negative weights')

    def moment(self, p: float) -> float:
        return float(np.dot(self.ws, np.power(self.xs, p)))

    def laplace(self, c):
        c = np.asarray(c, dtype=float)
        return np.tensordot(_compensated(np.multiply.outer(c, self.xs)), self.ws, axes=1)

    def laplace_derivative(self, c):
        c = np.asarray(c, dtype=float)
        outer = np.multiply.outer(c, self.xs)
        return np.tensordot(-np.expm1(-outer) * np.asarray(self.xs), self.ws, axes=1)

    def poisson_mass(self, c: float, i_max: int) -> np.ndarray:
        i = np.arange(2, i_max + 1)
        pmf = stats.poisson.pmf(i[:, None], c * np.asarray(self.xs)[None, :])
        return pmf @ np.asarray(self.ws)

    def to_dict(self) -> Dict[str, Any]:
        return {'type': self.name, 'xs': list(self.xs), 'ws': list(self.ws)}


BaseMeasure = Union[LebesgueOn01, AtomicMeasure]


# ========== Jump parts ==========

@dataclass(frozen=True)
class AlphaStable:
    """ψ_J(θ) = Cθ^α مع α ∈ (1,2)."""
    C: float
    alpha: float

    def __post_init__(self):
        if self.C <= 0 or not 1.0 < self.alpha < 2.0:
            raise CSBPError('AlphaStable needs C > 0 and alpha in (1, 2)', C=self.C, alpha=self.alpha)

    has_moments = False

    def psi(self, theta):
        return self.C * np.power(theta, self.alpha)

    def dpsi(self, theta):
        return self.C * self.alpha * np.power(theta, self.alpha - 1.0)

    def moment(self, p: float) -> float:
        raise MomentError('The alpha-stable jump measure has no finite moments of order >= alpha', p=p)

    def offspring_probabilities(self, n: int) -> np.ndarray:
        """p_i = (−1)^i binom(α, i)/(α−1) لكل i = 2..n+1 (مستقلة عن τ)."""
        ratios = (np.arange(2, n + 1) - self.alpha) / np.arange(3, n + 2)
        return 0.5 * self.alpha * np.concatenate(([1.0], np.cumprod(ratios)))

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'stable', 'C': self.C, 'alpha': self.alpha}


@dataclass(frozen=True)
class _MomentJump:
    """قفز بعزوم منتهية: Λ = weight·(دفع base بالتحجيم x ↦ scale·x)."""

    has_moments = True

    @property
    def scale(self) -> float:
        raise NotImplementedError

    @property
    def weight(self) -> float:
        raise NotImplementedError

    @property
    def measure(self) -> BaseMeasure:
        raise NotImplementedError

    def psi(self, theta):
        return self.weight * self.measure.laplace(self.scale * np.asarray(theta, dtype=float))

    def dpsi(self, theta):
        return self.weight * self.scale * self.measure.laplace_derivative(self.scale * np.asarray(theta, dtype=float))

    def moment(self, p: float) -> float:
        return self.weight * self.scale ** p * self.measure.moment(p)

    def offspring_rates(self, u: float, i_max: int) -> np.ndarray:
        """r^J_{i} = (1/ū)∫ Poisson(i; ūx)Λ(dx) لكل i = 2..i_max."""
        return self.weight * self.measure.poisson_mass(self.scale * u, i_max) / u


@dataclass(frozen=True)
class CutoffStable(_MomentJump):
    """العائلة المقطوعة عند A: m_{p,A} = A^{p−α}·m_{p,1}."""
    A: float
    alpha: float
    base: BaseMeasure = field(default_factory=LebesgueOn01)

    def __post_init__(self):
        if self.A < 1 or not 1.0 < self.alpha < 2.0:
            raise CSBPError('CutoffStable needs A >= 1 and alpha in (1, 2)', A=self.A, alpha=self.alpha)

    @property
    def scale(self) -> float:
        return self.A

    @property
    def weight(self) -> float:
        return self.A ** (-self.alpha)

    @property
    def measure(self) -> BaseMeasure:
        return self.base

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'cutoff', 'A': self.A, 'alpha': self.alpha, 'base': self.base.to_dict()}


@dataclass(frozen=True)
class Tabulated(_MomentJump):
    atoms: AtomicMeasure

    @property
    def scale(self) -> float:
        return 1.0

    @property
    def weight(self) -> float:
        return 1.0

    @property
    def measure(self) -> BaseMeasure:
        return self.atoms

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'tabulated', 'atoms': self.atoms.to_dict()}


Jump = Union[AlphaStable, CutoffStable, Tabulated]


# ========== Branching mechanism ==========

@dataclass(frozen=True)
class BranchingMechanism:
    """آلية تفرع ψ بمعاملات (b, d, Λ)."""
    b: float = 0.0
    d: float = 0.0
    jump: Optional[Jump] = None

    def __post_init__(self):
        if self.d < 0:
            raise CSBPError('Diffusion coefficient must be non-negative', d=self.d)

    # ----- constructors -----

    @classmethod
    def feller(cls, d: float = 1.0, b: float = 0.0) -> 'BranchingMechanism':
        return cls(b=b, d=d)

    @classmethod
    def stable(cls, C: float, alpha: float, b: float = 0.0, d: float = 0.0) -> 'BranchingMechanism':
        return cls(b=b, d=d, jump=AlphaStable(C, alpha))

    @classmethod
    def cutoff(cls, A: float, alpha: float, d: float = 0.0, b: float = 0.0,
               base: Optional[BaseMeasure] = None) -> 'BranchingMechanism':
        return cls(b=b, d=d, jump=CutoffStable(A, alpha, base or LebesgueOn01()))

    @classmethod
    def from_spec(cls, text: str) -> 'BranchingMechanism':
        """
        تحليل وصف نصي.

        Example:
            'feller:1', 'feller:1:0.5' (d, b)
            'stable:1:1.5' (C, α)
            'cutoff:2:1.5:1' (A, α, d[, b])
            'linear:1' (b)
        """
        head, _, rest = text.strip().partition(':')
        args = [float(p) for p in rest.split(':') if p]
        try:
            if head == 'feller':
                return cls.feller(*args) if args else cls.feller()
            if head == 'stable':
                return cls.stable(*args)
            if head == 'cutoff':
                return cls.cutoff(*args)
            if head == 'linear':
                return cls(b=args[0])
        except TypeError as exc:
            raise CSBPError(f'Bad mechanism arguments: {text}') from exc
        raise CSBPError('Unknown mechanism specification', spec=text)

    # ----- evaluation -----

    @property
    def is_stable(self) -> bool:
        return isinstance(self.jump, AlphaStable)

    @property
    def has_moments(self) -> bool:
        return self.jump is None or self.jump.has_moments

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < 0):
            raise DomainError('psi is defined for theta >= 0')
        return theta

    def psi(self, theta):
        theta = self._check(theta)
        value = self.b * theta + 0.5 * self.d * theta * theta
        if self.jump is not None:
            value = value + self.jump.psi(theta)
        return value

    def dpsi(self, theta):
        theta = self._check(theta)
        value = self.b + self.d * theta
        if self.jump is not None:
            value = value + self.jump.dpsi(theta)
        return value

    def moment_coefficient(self, p: int) -> float:
        """m_p = 1_{p=2}d + ∫x^pΛ(dx)."""
        if p < 2:
            raise CSBPError('Moment coefficients start at p = 2', p=p)
        value = self.d if p == 2 else 0.0
        if self.jump is not None:
            value += self.jump.moment(p)
        return value

    def jump_rate(self, u):
        """معدل تفرعات القفز في العملية المختزلة: ψ_J′(u) − ψ_J(u)/u."""
        u = np.asarray(u, dtype=float)
        if self.jump is None:
            return np.zeros_like(u)
        if self.is_stable:
            return self.jump.C * (self.jump.alpha - 1.0) * np.power(u, self.jump.alpha - 1.0)
        return self.jump.dpsi(u) - self.jump.psi(u) / u

    def label(self) -> str:
        parts = [f'b={self.b:g}', f'd={self.d:g}']
        if self.jump is not None:
            parts.append(str(self.jump.to_dict()))
        return 'psi(' + ', '.join(parts) + ')'

    def to_dict(self) -> Dict[str, Any]:
        return {'b': self.b, 'd': self.d, 'jump': self.jump.to_dict() if self.jump else None}


def psi_eval(mech: BranchingMechanism, theta) -> np.ndarray:
    return mech.psi(theta)


# ========== Grey's condition ==========

@dataclass(frozen=True)
class GreyCheck:
    holds: bool
    structural: bool
    theta0: float
    tail_ratio: float
    tail_decreasing: bool


def grey_check(mech: BranchingMechanism) -> GreyCheck:
    """
    شرط Grey: ψ(θ₀) > 0 و ∫^∞ dθ/ψ < ∞.

    الحكم بنيوي (d > 0 أو قفز α-stable)، والقيم العددية θ/ψ(θ) عند θ كبيرة تسجَّل للتشخيص.
    """
    structural = mech.d > 0 or mech.is_stable
    theta0 = 0.0
    if mech.b < 0:
        hi = 1.0
        while float(mech.psi(hi)) <= 0 and hi < 1e12:
            hi *= 2.0
        if float(mech.psi(hi)) > 0:
            theta0 = optimize.brentq(lambda th: float(mech.psi(th)), 1e-12, hi, xtol=1e-14)
    probes = np.array([1e10, 1e11, 1e12])
    ratios = probes / mech.psi(probes)
    return GreyCheck(
        holds=bool(structural and float(mech.psi(max(2.0 * theta0, 1.0))) > 0),
        structural=structural,
        theta0=float(theta0),
        tail_ratio=float(ratios[-1]),
        tail_decreasing=bool(np.all(np.diff(ratios) < 0)),
    )


# ========== Sequence checks ==========

def bound_sequence_check(R: float, u1: float, kmax: int):
    """
    u_k = R·Σ_{i=1}^{k−1} u_i u_{k−i} يحقق u_k ≤ u₁^k R^{k−1} 4^k.

    Returns:
        قائمة (k, u_k, الحد, صحيح؟)
    """
    u = [0.0, float(u1)]
    rows = []
    for k in range(1, kmax + 1):
        if k >= 2:
            u.append(R * math.fsum(u[i] * u[k - i] for i in range(1, k)))
        bound = u1 ** k * R ** (k - 1) * 4.0 ** k
        rows.append((k, u[k], bound, u[k] <= bound))
    return rows


def carleman_check(mech: BranchingMechanism, ks=range(4, 13)):
    """m_k^{1/k}/k متناقص على ks."""
    ks = list(ks)
    values = [mech.moment_coefficient(k) ** (1.0 / k) / k for k in ks]
    return all(b < a for a, b in zip(values, values[1:])), dict(zip(ks, values))
