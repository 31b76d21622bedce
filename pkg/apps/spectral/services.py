"""
Service Layer للمسألة الطيفية (Sturm–Liouville)
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. حل مسألة القيمة الذاتية الرئيسية ½v″ + ½Wv = λv على [0,L] بطريقة الإطلاق (shooting)
2. القيمة الحدية λ₁,∞ ومعاملات الحرجية (μ, β, α) وتصنيف النظام
3. الدوال التوافقية h و h̃ والقياس الثابت Π
4. الحلول الأساسية g_λ و d_λ ودالة Green لعملية العمود الفقري (spine)
5. الكميات المعكوسة على نصف المستقيم وهندسة القطع (N, A)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from scipy import integrate, optimize, stats
from scipy.interpolate import CubicHermiteSpline

from .exceptions import (
    DegenerateWronskianError,
    QuadratureError,
    RegimeError,
    ResolutionError,
    SingularArgumentError,
    SolverBracketError,
    SpectralError,
)
from .potentials import Potential, PotentialKind

# ========== Logging Configuration ==========
logger = logging.getLogger('spectral')

# ========== Constants ==========
DEFAULT_GRID_INTERVALS = 4096
BRACKET_STEP = 1e-2
SEMI_PUSHED_LIMIT = 1.0 / 16.0
MIN_INTERIOR_STEPS = 256
EPS = np.finfo(float).eps


def grid_intervals() -> int:
    return max(DEFAULT_GRID_INTERVALS, int(getattr(settings, 'LAB_GRID_INTERVALS', DEFAULT_GRID_INTERVALS)))


# ========== Regimes ==========

class Regime(Enum):
    """أنظمة انتشار الجبهة."""
    PULLED = 'pulled'
    SEMI_PUSHED = 'semi-pushed'
    PUSHED = 'pushed'


def criticality(lambda_inf: float) -> Tuple[float, float, float]:
    """(μ, β, α) من λ₁,∞ مع μ = √(1+2λ), β = √(2λ), α = (μ+β)/(μ−β)."""
    lam = max(0.0, float(lambda_inf))
    mu = math.sqrt(1.0 + 2.0 * lam)
    beta = math.sqrt(2.0 * lam)
    alpha = (mu + beta) / (mu - beta) if beta > 0 else 1.0
    return mu, beta, alpha


def classify_regime(lambda_inf: float) -> Regime:
    """
    تصنيف النظام بثلاثة اختبارات متكافئة يجب أن تتفق.

    Raises:
        RegimeError: إذا اختلفت الاختبارات (حالة رقمية على الحد تماماً)
    """
    mu, beta, alpha = criticality(lambda_inf)
    if beta == 0.0:
        return Regime.PULLED
    tests = (
        1.0 < alpha < 2.0,
        mu > 3.0 * beta,
        0.0 < lambda_inf < SEMI_PUSHED_LIMIT,
    )
    if len(set(tests)) != 1:
        raise RegimeError('Regime tests disagree', lambda_inf=lambda_inf, tests=tests)
    return Regime.SEMI_PUSHED if tests[0] else Regime.PUSHED


# ========== Constant-coefficient propagation ==========

def _fundamental(q, s):
    """
    المصفوفة الانتقالية لـ v″ = q·v على طول s.

    Returns:
        (C, S, C′, S′) بحيث v(s) = v₀C + v₀′S و v′(s) = v₀C′ + v₀′S′
    """
    q, s = np.broadcast_arrays(np.asarray(q, dtype=float), np.asarray(s, dtype=float))
    k = np.sqrt(np.abs(q))
    ks = k * s
    pos = q > 0
    neg = q < 0
    safe_k = np.where(k > 0, k, 1.0)
    with np.errstate(over='ignore', invalid='ignore'):
        c = np.where(pos, np.cosh(ks), np.where(neg, np.cos(ks), 1.0))
        sn = np.where(pos, np.sinh(ks) / safe_k, np.where(neg, np.sin(ks) / safe_k, s))
        dc = np.where(pos, k * np.sinh(ks), np.where(neg, -k * np.sin(ks), 0.0))
    return c, sn, dc, c


def _sinh_ratio(k: float, num, den: float):
    """sinh(k·num)/sinh(k·den) بدون فيضان، مع num, den ≥ 0 و k > 0."""
    num = np.asarray(num, dtype=float)
    return np.exp(k * (num - den)) * np.expm1(-2.0 * k * num) / np.expm1(-2.0 * k * den)


def _cosh_over_sinh(k: float, num, den: float):
    """cosh(k·num)/sinh(k·den) بدون فيضان."""
    num = np.asarray(num, dtype=float)
    return np.exp(k * (num - den)) * (1.0 + np.exp(-2.0 * k * num)) / (-np.expm1(-2.0 * k * den))


class _ShootingProblem:
    """تكامل المعادلة v″ = (2λ − W)v داخل الحامل [0,a] لمجموعة قيم λ دفعة واحدة."""

    def __init__(self, potential: Potential, L: float, n_intervals: int):
        self.potential = potential
        self.L = float(L)
        self.a = potential.support_edge
        self.ell = self.L - self.a
        self.h = self.L / n_intervals
        self.nodes = self._interior_nodes()

    def _interior_nodes(self) -> np.ndarray:
        if self.a <= 0:
            return np.array([0.0])
        grid = np.arange(0.0, self.a + 0.5 * self.h, self.h)
        grid = grid[grid <= self.a]
        parts = [grid, np.linspace(0.0, self.a, MIN_INTERIOR_STEPS + 1), [self.a]]
        if self.potential.kind is PotentialKind.TABULATED:
            xs = np.asarray(self.potential.xs)
            parts.append(xs[(xs >= 0) & (xs <= self.a)])
        return np.unique(np.concatenate(parts))

    def _rk4(self, lams: np.ndarray, nodes: np.ndarray, y0, z0) -> Tuple[np.ndarray, np.ndarray]:
        two_lam = 2.0 * np.atleast_1d(lams)
        y = np.broadcast_to(np.asarray(y0, dtype=float), two_lam.shape).copy()
        z = np.broadcast_to(np.asarray(z0, dtype=float), two_lam.shape).copy()
        out_y = np.empty((nodes.size, two_lam.size))
        out_z = np.empty_like(out_y)
        out_y[0], out_z[0] = y, z
        W = self.potential
        for i in range(nodes.size - 1):
            x0, x1 = nodes[i], nodes[i + 1]
            h = x1 - x0
            q0 = two_lam - W(x0)
            qm = two_lam - W(x0 + 0.5 * h)
            q1 = two_lam - W(x1)
            k1y, k1z = z, q0 * y
            k2y, k2z = z + 0.5 * h * k1z, qm * (y + 0.5 * h * k1y)
            k3y, k3z = z + 0.5 * h * k2z, qm * (y + 0.5 * h * k2y)
            k4y, k4z = z + h * k3z, q1 * (y + h * k3y)
            y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            z = z + h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
            out_y[i + 1], out_z[i + 1] = y, z
        return out_y, out_z

    def interior(self, lam: float, x: np.ndarray, start: Tuple[float, float] = (0.0, 1.0),
                 from_edge: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        قيم الحل ومشتقته عند نقاط x داخل [0,a].

        Args:
            start: (v, v′) عند 0، أو عند a إذا كان from_edge=True
        """
        x = np.asarray(x, dtype=float)
        kind = self.potential.kind
        origin = self.a if from_edge else 0.0
        if kind is PotentialKind.ZERO or kind is PotentialKind.STEP:
            q = 2.0 * lam - self.potential.max_value
            c, sn, dc, ds = _fundamental(q, x - origin)
            return start[0] * c + start[1] * sn, start[0] * dc + start[1] * ds
        nodes = self.nodes[::-1] if from_edge else self.nodes
        ys, zs = self._rk4(np.array([lam]), nodes, start[0], start[1])
        ys, zs = ys[:, 0], zs[:, 0]
        if from_edge:
            ys, zs, nodes = ys[::-1], zs[::-1], nodes[::-1]
        spline = CubicHermiteSpline(nodes, ys, zs) if nodes.size > 1 else None
        if spline is None:
            return np.full_like(x, ys[0]), np.full_like(x, zs[0])
        return spline(x), spline.derivative()(x)

    def edge_state(self, lams) -> Tuple[np.ndarray, np.ndarray]:
        """(v(a), v′(a)) لكل λ، بدءاً من v(0)=0, v′(0)=1."""
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        kind = self.potential.kind
        if kind is PotentialKind.ZERO:
            return np.zeros_like(lams), np.ones_like(lams)
        if kind is PotentialKind.STEP:
            _, sn, _, ds = _fundamental(2.0 * lams - self.potential.height, self.a)
            return sn, ds
        ys, zs = self._rk4(lams, self.nodes, 0.0, 1.0)
        return ys[-1], zs[-1]

    def residual(self, lams) -> np.ndarray:
        """
        دالة الإطلاق: إشارتها تساوي إشارة v(L).

        λ > 0: v′(a) + k·v(a)·coth(kℓ)، و λ ≤ 0: v(L)/ℓ (متصلة عند λ = 0).
        """
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        va, dva = self.edge_state(lams)
        out = np.empty_like(lams)
        pos = lams > 0
        if np.any(pos):
            k = np.sqrt(2.0 * lams[pos])
            coth = 1.0 + 2.0 / np.expm1(2.0 * k * self.ell)
            out[pos] = dva[pos] + k * va[pos] * coth
        if np.any(~pos):
            c, sn, _, _ = _fundamental(2.0 * lams[~pos], self.ell)
            out[~pos] = (va[~pos] * c + dva[~pos] * sn) / self.ell
        return out

    def half_line_residual(self, lams) -> np.ndarray:
        """شرط المطابقة على نصف المستقيم: v′(a) + √(2λ)·v(a)."""
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        va, dva = self.edge_state(lams)
        return dva + np.sqrt(2.0 * lams) * va

    def exterior(self, lam: float, va: float, dva: float, x: np.ndarray,
                 enforce_boundary: bool) -> Tuple[np.ndarray, np.ndarray]:
        """الحل على [a, L] حيث W = 0، بالصيغ المغلقة."""
        s = np.asarray(x, dtype=float) - self.a
        if lam > 0 and enforce_boundary:
            k = math.sqrt(2.0 * lam)
            v = va * _sinh_ratio(k, self.ell - s, self.ell)
            dv = -k * va * _cosh_over_sinh(k, self.ell - s, self.ell)
            return v, dv
        if lam > 0:
            k = math.sqrt(2.0 * lam)
            phi = dva + k * va * (1.0 + 2.0 / math.expm1(2.0 * k * self.ell))
            v = va * _sinh_ratio(k, self.ell - s, self.ell) + phi * np.sinh(k * s) / k
            dv = -k * va * _cosh_over_sinh(k, self.ell - s, self.ell) + phi * np.cosh(k * s)
            return v, dv
        c, sn, dc, ds = _fundamental(2.0 * lam, s)
        return va * c + dva * sn, va * dc + dva * ds


def _scan_largest_root(func, lam_hi: float, lam_lo: float, step: float, tol: float) -> Optional[float]:
    grid = np.arange(lam_hi, lam_lo - step, -step)
    grid[-1] = min(grid[-1], lam_lo)
    values = func(grid)
    signs = np.sign(values)
    exact = np.flatnonzero(signs == 0)
    changes = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    candidates = []
    if exact.size:
        candidates.append(('exact', exact[0]))
    if changes.size:
        candidates.append(('bracket', changes[0]))
    if not candidates:
        return None
    kind, index = min(candidates, key=lambda item: item[1])
    if kind == 'exact':
        return float(grid[index])
    lo, hi = grid[index + 1], grid[index]
    logger.debug(f'Eigenvalue bracket [{lo:.6g}, {hi:.6g}]')
    return optimize.brentq(
        lambda lam: float(func(np.array([lam]))[0]),
        lo, hi, xtol=tol, rtol=4.0 * EPS, maxiter=500,
    )


# ========== Data Classes ==========

@dataclass(frozen=True)
class SpectralSolution:
    """
    الحل الرئيسي لمسألة Sturm–Liouville على [0,L].

    v1 مُطبَّعة بحيث v1(1) = 1، و v1_norm2 = ∫₀ᴸ v₁² (مربع معيار L²).
    """
    potential: Potential
    L: float
    tol: float
    lambda1: float
    x: np.ndarray
    v1: np.ndarray
    dv1: np.ndarray
    v1_norm2: float
    lambda1_inf: float
    w: float
    mu: float
    beta: float
    alpha: float
    cL: float
    regime: Regime

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.x, self.v1, self.dv1)

    @cached_property
    def _dspline(self):
        return self._spline.derivative()

    @property
    def grid_step(self) -> float:
        return self.L / (self.x.size - 1)

    def v1_at(self, x) -> np.ndarray:
        return self._spline(np.clip(x, 0.0, self.L))

    def dv1_at(self, x) -> np.ndarray:
        return self._dspline(np.clip(x, 0.0, self.L))

    def drift(self, x) -> np.ndarray:
        """انجراف العمود الفقري v₁′/v₁."""
        return self.dv1_at(x) / self.v1_at(x)

    def rate(self, x) -> np.ndarray:
        return self.potential.rate(x)

    def summary(self) -> dict:
        return {
            'L': self.L,
            'lambda1': self.lambda1,
            'lambda1_inf': self.lambda1_inf,
            'w': self.w,
            'mu': self.mu,
            'beta': self.beta,
            'alpha': self.alpha,
            'cL': self.cL,
            'v1_norm2': self.v1_norm2,
            'regime': self.regime.value,
        }


@dataclass(frozen=True)
class HarmonicPair:
    """h̃ = c_L e^{−μx}v₁ و h = e^{μx}v₁/(c_L‖v₁‖²) و Π = h·h̃ على الشبكة."""
    solution: SpectralSolution
    mu: float
    cL: float
    h: np.ndarray
    h_tilde: np.ndarray
    pi: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.solution.x

    def h_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(self.mu * x) * self.solution.v1_at(x) / (self.cL * self.solution.v1_norm2)

    def h_tilde_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.cL * np.exp(-self.mu * x) * self.solution.v1_at(x)

    def pi_at(self, x) -> np.ndarray:
        return self.solution.v1_at(x) ** 2 / self.solution.v1_norm2

    def inner_product(self) -> float:
        return float(integrate.simpson(self.h * self.h_tilde, x=self.x))


@dataclass(frozen=True)
class GapScaling:
    """نتيجة انحدار log w مقابل L."""
    lengths: Tuple[float, ...]
    gaps: Tuple[float, ...]
    lambda1_inf: float
    doubling_estimate: float
    slope: float
    intercept: float
    expected_slope: float

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.expected_slope) / abs(self.expected_slope)


@dataclass(frozen=True)
class CutoffGeometry:
    """هندسة القطع: الطول L_{N,A} وزمن النافذة ε."""
    N: float
    A: float
    gamma: float
    L_NA: float
    epsilon: float
    delta1: float
    delta2: float


# ========== Solver ==========

def solve_slp(potential: Potential, L: float, tol: float = 1e-10,
              n_intervals: Optional[int] = None) -> SpectralSolution:
    """
    حل مسألة القيمة الذاتية الرئيسية بطريقة الإطلاق.

    Args:
        potential: الجهد W
        L: طول المجال (> 1)
        tol: دقة λ₁
        n_intervals: عدد فترات الشبكة (≥ 4096)

    Returns:
        SpectralSolution

    Raises:
        SolverBracketError: لا يوجد تغيّر إشارة أو الجذر ليس رئيسياً
        ResolutionError: الشبكة أخشن من عتبة الجهد
    """
    if L <= 1:
        raise SpectralError('Domain length must exceed 1', L=L)
    if tol <= 0:
        raise SpectralError('Tolerance must be positive', tol=tol)
    n = max(grid_intervals(), int(n_intervals or 0))
    h = L / n
    for edge in potential.discontinuities:
        if edge < 2.0 * h:
            raise ResolutionError('Grid too coarse for the step discontinuity', edge=edge, h=h)

    problem = _ShootingProblem(potential, L, n)
    lam_hi = 1.0 + potential.max_value
    lam_lo = min(-1.0, -math.pi ** 2 / (2.0 * L ** 2) - 0.01)
    step = min(BRACKET_STEP, math.pi ** 2 / (4.0 * L ** 2))
    lam1 = _scan_largest_root(problem.residual, lam_hi, lam_lo, step, tol)
    if lam1 is None:
        raise SolverBracketError('No sign change in the bracketing interval', L=L, potential=str(potential))

    x = np.linspace(0.0, L, n + 1)
    v = np.empty_like(x)
    dv = np.empty_like(x)
    inside = x <= problem.a
    v[inside], dv[inside] = problem.interior(lam1, x[inside])
    va, dva = (float(arr[0]) for arr in problem.edge_state(lam1))
    v[~inside], dv[~inside] = problem.exterior(lam1, va, dva, x[~inside], enforce_boundary=True)
    v[0], v[-1] = 0.0, 0.0

    v_at_one = float(problem.exterior(lam1, va, dva, np.array([1.0]), enforce_boundary=True)[0][0])
    if not v_at_one > 0:
        raise SolverBracketError('Eigenfunction does not stay positive at x=1', lambda1=lam1)
    v /= v_at_one
    dv /= v_at_one
    if np.any(v[1:-1] <= 0):
        raise SolverBracketError('Root is not the principal eigenvalue (v1 changes sign)', lambda1=lam1)

    lam_inf = limit_eigenvalue(potential)
    mu, beta, alpha = criticality(lam_inf)
    norm2 = float(integrate.simpson(v * v, x=x))
    mass = float(integrate.simpson(np.exp(-mu * x) * v, x=x))
    if not (np.isfinite(norm2) and norm2 > 0 and np.isfinite(mass) and mass > 0):
        raise QuadratureError('Normalisation integrals are not positive and finite', norm2=norm2, mass=mass)
    for arr in (x, v, dv):
        arr.setflags(write=False)

    solution = SpectralSolution(
        potential=potential,
        L=float(L),
        tol=tol,
        lambda1=float(lam1),
        x=x,
        v1=v,
        dv1=dv,
        v1_norm2=norm2,
        lambda1_inf=lam_inf,
        w=lam_inf - float(lam1),
        mu=mu,
        beta=beta,
        alpha=alpha,
        cL=1.0 / mass,
        regime=classify_regime(lam_inf),
    )
    logger.info(f'Solved SLP for {potential} on [0, {L:g}]: lambda1={lam1:.12g}, w={solution.w:.4g}')
    return solution


@lru_cache(maxsize=64)
def limit_eigenvalue(potential: Potential, tol: float = 1e-15) -> float:
    """
    λ₁,∞ من شرط المطابقة على نصف المستقيم v′(a) + √(2λ)v(a) = 0.

    يعيد 0 عند غياب حالة مقيدة (النظام pulled).
    """
    if potential.max_value <= 0:
        return 0.0
    problem = _ShootingProblem(potential, potential.support_edge + 1.0, DEFAULT_GRID_INTERVALS)
    lam_hi = 0.5 * potential.max_value + 0.01
    root = _scan_largest_root(problem.half_line_residual, lam_hi, 1e-14, 1e-3, tol)
    return 0.0 if root is None else float(root)


def residual_check(sol: SpectralSolution) -> float:
    """
    باقي المعادلة ‖½v₁″ + ½Wv₁ − λ₁v₁‖∞ على داخل الشبكة (نسبة إلى sup v₁).

    v₁″ تُقدَّر بفروق مركزية من الرتبة الرابعة على عينات v₁′.
    """
    x, v, dv, h = sol.x, sol.v1, sol.dv1, sol.grid_step
    second = (-dv[4:] + 8.0 * dv[3:-1] - 8.0 * dv[1:-3] + dv[:-4]) / (12.0 * h)
    xs = x[2:-2]
    resid = 0.5 * second + 0.5 * sol.potential(xs) * v[2:-2] - sol.lambda1 * v[2:-2]
    mask = np.ones(xs.size, dtype=bool)
    for edge in sol.potential.discontinuities:
        mask &= np.abs(xs - edge) > 3.0 * h
    return float(np.max(np.abs(resid[mask])) / np.max(np.abs(v)))


def verify_v1_tail(sol: SpectralSolution) -> float:
    """أقصى فرق بين v₁ وصيغة sinh(√(2λ₁)(L−x))/sinh(√(2λ₁)(L−1)) على [1,L]."""
    if sol.lambda1 <= 0:
        raise RegimeError('The sinh tail needs lambda1 > 0', lambda1=sol.lambda1)
    k = math.sqrt(2.0 * sol.lambda1)
    mask = sol.x >= 1.0
    form = _sinh_ratio(k, sol.L - sol.x[mask], sol.L - 1.0)
    return float(np.max(np.abs(sol.v1[mask] - form)))


def harmonic_pair(sol: SpectralSolution, mu: Optional[float] = None) -> HarmonicPair:
    """
    الدالتان التوافقيتان والقياس الثابت.

    Raises:
        QuadratureError: إذا لم يكن h̃ قابلاً للتطبيع
    """
    mu = sol.mu if mu is None else float(mu)
    if mu <= 0:
        raise SpectralError('mu must be positive', mu=mu)
    x, v = sol.x, sol.v1
    mass = float(integrate.simpson(np.exp(-mu * x) * v, x=x))
    if not (np.isfinite(mass) and mass > 0):
        raise QuadratureError('h_tilde is not normalisable', mass=mass)
    cL = 1.0 / mass
    h_tilde = cL * np.exp(-mu * x) * v
    h = np.exp(mu * x) * v / (cL * sol.v1_norm2)
    pi = v * v / sol.v1_norm2
    return HarmonicPair(solution=sol, mu=mu, cL=cL, h=h, h_tilde=h_tilde, pi=pi)


def sample_pi(sol: SpectralSolution, n: int, rng: np.random.Generator) -> np.ndarray:
    """عينات من الكثافة Π بمعكوس دالة التوزيع على الشبكة."""
    density = sol.v1 ** 2
    cdf = integrate.cumulative_trapezoid(density, sol.x, initial=0.0)
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, sol.x)


def gap_scaling(potential: Potential, lengths: Sequence[float]) -> GapScaling:
    """
    سرعة تقارب القيمة الذاتية: w(L) = λ₁,∞ − λ₁(L) ∼ c₀e^{−2βL}.

    Raises:
        RegimeError: إذا لم يكن λ₁,∞ > 0
    """
    lengths = [float(L) for L in lengths]
    if len(lengths) < 4 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise SpectralError('Need at least 4 increasing lengths', lengths=lengths)
    lam_inf = limit_eigenvalue(potential)
    if lam_inf <= 0:
        raise RegimeError('Gap scaling needs a pushed potential', potential=str(potential))
    _, beta, _ = criticality(lam_inf)
    gaps = []
    for L in lengths:
        sol = solve_slp(potential, L, tol=1e-15)
        gaps.append(sol.w)
        logger.debug(f'gap at L={L:g}: w={sol.w:.6e}')
    if any(g <= 0 for g in gaps):
        raise SpectralError('Non-positive gap: eigenvalue resolution exhausted', gaps=gaps)
    doubled = solve_slp(potential, 2.0 * lengths[-1], tol=1e-15).lambda1
    fit = stats.linregress(lengths, np.log(gaps))
    result = GapScaling(
        lengths=tuple(lengths),
        gaps=tuple(gaps),
        lambda1_inf=lam_inf,
        doubling_estimate=doubled,
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        expected_slope=-2.0 * beta,
    )
    logger.info(f'Gap scaling slope {result.slope:.4f} (expected {result.expected_slope:.4f})')
    return result


# ========== Fundamental solutions and Green function ==========

@dataclass(frozen=True)
class FundamentalSolutions:
    """
    الحلان g_λ (من اليسار) و d_λ (من اليمين) عند λ = λ₁ + ξ والـ Wronskian بينهما.

    دالة Green للعمود الفقري:
        G_ξ(x,y) = (2/ω)·(v₁(y)/v₁(x))·d_λ(x∨y)·g_λ(x∧y)
    والمعامل 2 يأتي من ½ في المولِّد، بحيث ∫G_ξ(x,y)dy = 1/ξ.
    """
    solution: SpectralSolution
    xi: float
    lam: float
    g: np.ndarray
    dg: np.ndarray
    d: np.ndarray
    dd: np.ndarray
    wronskian: float

    @cached_property
    def _g_spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.solution.x, self.g, self.dg)

    @cached_property
    def _d_spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.solution.x, self.d, self.dd)

    def g_at(self, x) -> np.ndarray:
        return self._g_spline(np.clip(x, 0.0, self.solution.L))

    def d_at(self, x) -> np.ndarray:
        return self._d_spline(np.clip(x, 0.0, self.solution.L))

    def green(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        L = self.solution.L
        if np.any((x <= 0) | (x >= L)):
            raise SingularArgumentError('Green function is singular where v1(x) = 0', L=L)
        if np.any((y < 0) | (y > L)):
            raise SpectralError('y must lie in [0, L]', L=L)
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        sol = self.solution
        return 2.0 / self.wronskian * sol.v1_at(y) / sol.v1_at(x) * self.d_at(hi) * self.g_at(lo)


def _normalised_right_solution(lam: float, lam1: float, L: float, x: np.ndarray):
    """d_λ على المنطقة الخارجية مع التطبيع d_{λ₁}(1) = 1."""
    if lam > 0 and lam1 > 0:
        k, k1 = math.sqrt(2.0 * lam), math.sqrt(2.0 * lam1)
        r = L - x
        growth = np.exp(k * r - k1 * (L - 1.0)) / (-math.expm1(-2.0 * k1 * (L - 1.0)))
        return growth * (-np.expm1(-2.0 * k * r)), -k * growth * (1.0 + np.exp(-2.0 * k * r))
    _, sn, _, ds = _fundamental(2.0 * lam, L - x)
    _, norm, _, _ = _fundamental(2.0 * lam1, L - 1.0)
    return sn / norm, -ds / norm


def fundamental_solutions(sol: SpectralSolution, xi: float) -> FundamentalSolutions:
    """
    g_λ(0)=0, g_λ′(0)=v₁′(0)؛ d_λ(x) = sinh(√(2λ)(L−x))/sinh(√(2λ₁)(L−1)) على [a,L]
    وتمدد بتكامل المعادلة تحت a؛ ω_λ = d_λ(1)g_λ′(1) − d_λ′(1)g_λ(1).

    Raises:
        DegenerateWronskianError: إذا كان ω ≈ 0
    """
    if xi <= 0:
        raise SpectralError('xi must be positive', xi=xi)
    if xi > 1.0 / (10.0 * sol.L):
        logger.warning(f'xi={xi:g} exceeds 1/(10L); asymptotics in xi are not reliable')
    lam = sol.lambda1 + xi
    problem = _ShootingProblem(sol.potential, sol.L, sol.x.size - 1)
    x = sol.x
    inside = x <= problem.a
    slope0 = float(sol.dv1[0])

    g = np.empty_like(x)
    dg = np.empty_like(x)
    g[inside], dg[inside] = problem.interior(lam, x[inside], start=(0.0, slope0))
    ga, dga = (float(arr[0]) * slope0 for arr in problem.edge_state(lam))
    g[~inside], dg[~inside] = problem.exterior(lam, ga, dga, x[~inside], enforce_boundary=False)

    d = np.empty_like(x)
    dd = np.empty_like(x)
    d[~inside], dd[~inside] = _normalised_right_solution(lam, sol.lambda1, sol.L, x[~inside])
    da, dda = (float(arr[0]) for arr in _normalised_right_solution(lam, sol.lambda1, sol.L, np.array([problem.a])))
    if np.any(inside):
        d[inside], dd[inside] = problem.interior(lam, x[inside], start=(da, dda), from_edge=True)
    d[-1] = 0.0

    d1, dd1 = (float(arr[0]) for arr in _normalised_right_solution(lam, sol.lambda1, sol.L, np.array([1.0])))
    g1, dg1 = (float(arr[0]) for arr in problem.exterior(lam, ga, dga, np.array([1.0]), enforce_boundary=False))
    omega = d1 * dg1 - dd1 * g1
    scale = abs(d1 * dg1) + abs(dd1 * g1)
    if abs(omega) <= 64.0 * EPS * scale:
        raise DegenerateWronskianError('Wronskian vanishes: lambda is an eigenvalue', wronskian=omega, lam=lam)
    return FundamentalSolutions(solution=sol, xi=float(xi), lam=lam, g=g, dg=dg, d=d, dd=dd, wronskian=omega)


def green_function(sol: SpectralSolution, xi: float, x, y,
                   fundamentals: Optional[FundamentalSolutions] = None) -> np.ndarray:
    """G_ξ(x,y) لعملية العمود الفقري."""
    fs = fundamentals if fundamentals is not None else fundamental_solutions(sol, xi)
    return fs.green(x, y)


# ========== Half-line limit and reversed quantities ==========

@dataclass(frozen=True)
class LimitSolution:
    """
    الدالة الذاتية على نصف المستقيم: v₁,∞(x) = e^{−β(x−1)} لـ x ≥ a.

    v_norm2 = ∫₀^∞ v₁,∞² و c_inf = (∫₀^∞ e^{−μx}v₁,∞)⁻¹.
    """
    potential: Potential
    lambda1_inf: float
    mu: float
    beta: float
    alpha: float
    regime: Regime
    edge: float
    nodes: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    v_norm2: float
    c_inf: float

    def v_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tail = np.exp(-self.beta * (x - 1.0))
        if self.nodes.size < 2:
            return tail
        inner = np.interp(x, self.nodes, self.v)
        return np.where(x <= self.edge, inner, tail)

    def h_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(self.mu * x) * self.v_at(x) / (self.c_inf * self.v_norm2)

    def h_tilde_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.c_inf * np.exp(-self.mu * x) * self.v_at(x)


def limit_solution(potential: Potential) -> LimitSolution:
    """
    Raises:
        RegimeError: إذا كان β = 0 (لا توجد حالة مقيدة قابلة للتطبيع)
    """
    lam_inf = limit_eigenvalue(potential)
    mu, beta, alpha = criticality(lam_inf)
    if beta <= 0:
        raise RegimeError('Half-line eigenfunction is not normalisable when beta = 0', potential=str(potential))
    a = potential.support_edge
    problem = _ShootingProblem(potential, a + 1.0, DEFAULT_GRID_INTERVALS)
    nodes = problem.nodes
    v, dv = problem.interior(lam_inf, nodes)
    va = float(v[-1])
    scale = 1.0 / (va * math.exp(-beta * (1.0 - a)))
    v, dv = v * scale, dv * scale
    va *= scale
    inner_sq = float(integrate.simpson(v * v, x=nodes)) if nodes.size > 2 else 0.0
    inner_mass = float(integrate.simpson(np.exp(-mu * nodes) * v, x=nodes)) if nodes.size > 2 else 0.0
    v_norm2 = inner_sq + va * va / (2.0 * beta)
    c_inf = 1.0 / (inner_mass + va * math.exp(-mu * a) / (mu + beta))
    return LimitSolution(
        potential=potential,
        lambda1_inf=lam_inf,
        mu=mu,
        beta=beta,
        alpha=alpha,
        regime=classify_regime(lam_inf),
        edge=a,
        nodes=nodes,
        v=v,
        dv=dv,
        v_norm2=v_norm2,
        c_inf=c_inf,
    )


@dataclass(frozen=True)
class ReversedQuantities:
    """
    كميات العملية المعكوسة (منظوراً إليها من الحد الأيمن):
        v←₁(z) = 2e^β sinh(βz)
        h←(z)  = v←₁(z)e^{−μz}/(c_∞‖v₁,∞‖²)
        h̃←(z) = c_∞e^{μz}v←₁(z)
        Π←(z)  = v←₁(z)²/‖v₁,∞‖²   (= h←·h̃←)
    """
    beta: float
    mu: float
    alpha: float
    c_inf: float
    v_norm2: float

    @classmethod
    def from_limit(cls, limit: LimitSolution) -> 'ReversedQuantities':
        return cls(beta=limit.beta, mu=limit.mu, alpha=limit.alpha, c_inf=limit.c_inf, v_norm2=limit.v_norm2)

    def v1(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 2.0 * math.exp(self.beta) * np.sinh(self.beta * z)

    def dv1(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 2.0 * self.beta * math.exp(self.beta) * np.cosh(self.beta * z)

    def h(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        b, m = self.beta, self.mu
        core = math.exp(b) * (np.exp((b - m) * z) - np.exp(-(b + m) * z))
        return core / (self.c_inf * self.v_norm2)

    def h_tilde(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.c_inf * np.exp(self.mu * z) * self.v1(z)

    def pi(self, z) -> np.ndarray:
        return self.v1(z) ** 2 / self.v_norm2

    def drift(self, z) -> np.ndarray:
        """β·coth(βz) ≈ 1/z قرب الصفر."""
        z = np.asarray(z, dtype=float)
        return self.beta * (1.0 + 2.0 / np.expm1(2.0 * self.beta * z))

    def green(self, z, y) -> np.ndarray:
        """G←(z,y) = sinh²(βy)(coth(β(z∨y)) − 1)/β بصيغة مستقرة."""
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        b = self.beta
        m = np.maximum(z, y)
        return np.expm1(-2.0 * b * y) ** 2 * np.exp(2.0 * b * (y - m)) / (-2.0 * np.expm1(-2.0 * b * m)) / b

    def h_sup(self) -> float:
        zs = np.linspace(0.0, 40.0 / max(self.mu - self.beta, 1e-3), 8001)
        return float(np.max(self.h(zs)))


def reversed_quantities(potential: Potential) -> ReversedQuantities:
    return ReversedQuantities.from_limit(limit_solution(potential))


# ========== Cutoff geometry ==========

def cutoff_geometry(mu: float, beta: float, N: float, A: float, delta1: float = 0.2) -> CutoffGeometry:
    """
    L_{N,A} = (1/(2β))log N + (1/(μ−β))log A و ε = ((1−δ₁)/β)L_{N,A}
    مع δ₂ = (1−δ₁)(μ−β)/(2β) − 1 بحيث ε = (2(1+δ₂)/(μ−β))L_{N,A}.

    Raises:
        RegimeError: خارج النظام شبه المدفوع أو δ₂ ≤ 0
    """
    if beta <= 0:
        raise RegimeError('Cutoff geometry needs beta > 0', beta=beta)
    alpha = (mu + beta) / (mu - beta)
    if not 1.0 < alpha < 2.0:
        raise RegimeError('Cutoff geometry needs the semi-pushed regime', alpha=alpha)
    if N <= 1 or A < 1:
        raise SpectralError('Need N > 1 and A >= 1', N=N, A=A)
    if not 0.0 < delta1 < 1.0:
        raise SpectralError('delta1 must lie in (0, 1)', delta1=delta1)
    length = math.log(N) / (2.0 * beta) + math.log(A) / (mu - beta)
    delta2 = (1.0 - delta1) * (mu - beta) / (2.0 * beta) - 1.0
    if delta2 <= 0:
        raise RegimeError('delta2 is not positive for this delta1', delta1=delta1, delta2=delta2)
    return CutoffGeometry(
        N=float(N),
        A=float(A),
        gamma=1.0 / (alpha - 1.0),
        L_NA=length,
        epsilon=(1.0 - delta1) / beta * length,
        delta1=delta1,
        delta2=delta2,
    )


def scale_for_length(mu: float, beta: float, L: float, A: float) -> float:
    """معكوس L_{N,A}: قيمة N التي تعطي الطول L."""
    return math.exp(2.0 * beta * (L - math.log(A) / (mu - beta)))
