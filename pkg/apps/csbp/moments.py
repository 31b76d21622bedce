"""
قياسات العزوم المستوية لفضاءات ψ-mm
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. csbp_moments: M̂^{k,t}[G] بالتكرار على شبكة s مشتركة مع ذاكرة للأبناء
2. sample_planar: أخذ عينات دقيقة من قياس العزم المستوي المُطبَّع
3. unplanarize: Σ_P M^{k,t}[G∘P] مع M = M̂/ū_t
4. pair_moment_check: مقارنة عزم الأزواج مع مونت كارلو للعملية المختزلة
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from apps.core.stats import Estimate
from apps.ultrametric.functionals import (
    Constant, DepthIndicator, Functional, MarkPolynomial, ProductFunctional, eval_functional,
)
from apps.ultrametric.services import compositions, permute, reconstruct

from .exceptions import CombinatorialBlowupError, MomentError, UnsupportedFunctionalError
from .mechanisms import BranchingMechanism
from .reduced import offdiagonal_mass, probe_time, simulate_forest
from .services import LaplaceFlow, ReducedRates

logger = logging.getLogger('csbp')

GRID_INTERVALS = 512
MIN_SEGMENT_INTERVALS = 2
MAX_UNPLANAR_K = 8
EXHAUSTIVE_PERMUTATIONS = 24

MatrixFunctional = Union[Functional, Callable[[np.ndarray], float]]


# ========== Shared s-grid ==========

class _Grid:
    """شبكة على [0, t] مقسمة عند نقاط الانقطاع بحيث لا يعبر أي مقطع نقطة انقطاع."""

    def __init__(self, t: float, breakpoints: Sequence[float] = (), intervals: int = GRID_INTERVALS):
        cuts = sorted({0.0, float(t)} | {float(p) for p in breakpoints if 0 < p < t})
        pieces, self.segments = [], []
        start = 0
        for a, b in zip(cuts, cuts[1:]):
            n = max(MIN_SEGMENT_INTERVALS, int(round(intervals * (b - a) / t)))
            xs = np.linspace(a, b, n + 1)
            pieces.append(xs if not pieces else xs[1:])
            self.segments.append((start, start + n))
            start += n
        self.t = float(t)
        self.points = np.concatenate(pieces)

    def cumulative(self, weight: np.ndarray, depth: Callable = None) -> np.ndarray:
        """∫₀ˢ weight·depth على كل نقاط الشبكة؛ depth تُقيَّم داخل المقطع."""
        out = np.zeros(self.points.size)
        offset = 0.0
        for i, j in self.segments:
            xs = self.points[i:j + 1]
            y = weight[i:j + 1]
            if depth is not None:
                h = 1e-9 * (xs[-1] - xs[0])
                y = y * depth(np.clip(xs, xs[0] + h, xs[-1] - h))
            out[i:j + 1] = offset + integrate.cumulative_simpson(y, x=xs, initial=0.0)
            offset = out[j]
        return out

    def at(self, values: np.ndarray, s: float) -> float:
        return float(np.interp(s, self.points, values))


# ========== Moment recursion ==========

class _MomentRecursion:
    """M̂^{k,s}[G] كدالة في s على الشبكة، مع ذاكرة مفتاحها (الدالة، k)."""

    def __init__(self, mech: BranchingMechanism, grid: _Grid):
        self.mech = mech
        self.grid = grid
        self.growth = np.exp(mech.b * grid.points)
        self._memo: Dict[Tuple[Functional, int], np.ndarray] = {}
        self._coefficients: Dict[int, float] = {}

    def coefficient(self, parts: int) -> float:
        """m_{|c|}/|c|!."""
        if parts not in self._coefficients:
            self._coefficients[parts] = self.mech.moment_coefficient(parts) / math.factorial(parts)
        return self._coefficients[parts]

    def values(self, G: Functional, k: int) -> np.ndarray:
        key = (G, k)
        if key not in self._memo:
            self._memo[key] = self._compute(G, k)
        return self._memo[key]

    def _compute(self, G: Functional, k: int) -> np.ndarray:
        if isinstance(G, MarkPolynomial):
            raise UnsupportedFunctionalError('Mark functionals are not covered by the moment recursion')
        if isinstance(G, Constant):
            if k == 1:
                return G.value / self.growth
            total = np.zeros(self.grid.points.size)
            for c in compositions(k):
                if len(c) >= 2:
                    total += self.values(ProductFunctional.uniform(c), k)
            return G.value * total
        if G.epsilon > 0:
            raise UnsupportedFunctionalError('Functionals with an epsilon gap are not supported', epsilon=G.epsilon)
        if G.size != k:
            return np.zeros(self.grid.points.size)
        if len(G.composition) < 2:
            return np.zeros(self.grid.points.size)
        weight = self.growth.copy()
        for part, child in zip(G.composition, G.children):
            weight *= self.values(child, part)
        cumulative = self.grid.cumulative(weight, G.depth)
        return self.coefficient(len(G.composition)) * cumulative / self.growth


def _require_moments(mech: BranchingMechanism) -> None:
    if not mech.has_moments:
        raise MomentError('Moment measures need a jump measure with all moments', mechanism=mech.label())


def csbp_moments(mech: BranchingMechanism, k: int, t: float, G: Functional) -> float:
    """
    M̂^{k,t}[G] للدوال المنتجية.

    M̂^{1,t}[1] = e^{−bt}، ولـ k ≥ 2:
        M̂^{k,t}[G] = (m_{|c|}/|c|!)∫₀ᵗ e^{−b(t−s)}f(s)∏M̂^{c_i,s}[F_i]ds

    Raises:
        MomentError: لآلية α-stable
        UnsupportedFunctionalError: لـ ε > 0 أو دوال العلامات
    """
    _require_moments(mech)
    if k < 1 or t <= 0:
        raise UnsupportedFunctionalError('Moments need k >= 1 and t > 0', k=k, t=t)
    recursion = _MomentRecursion(mech, _Grid(t, G.breakpoints()))
    value = float(recursion.values(G, k)[-1])
    logger.debug(f'M_hat^{{{k},{t:g}}} = {value:.10g} for {mech.label()}')
    return value


# ========== Exact planar sampler ==========

class _PlanarMomentTable:
    """جداول I_c(x) = ∫₀ˣ e^{bs}∏M̂^{c_i,s}[1]ds لكل تركيبة c لأحجام ≤ k."""

    def __init__(self, mech: BranchingMechanism, k: int, t: float):
        _require_moments(mech)
        self.mech = mech
        self.k = k
        self.grid = _Grid(t)
        self.growth = np.exp(mech.b * self.grid.points)
        recursion = _MomentRecursion(mech, self.grid)
        self.totals = {1: 1.0 / self.growth}
        self.tables: Dict[int, List[Tuple[Tuple[int, ...], float, np.ndarray]]] = {}
        for size in range(2, k + 1):
            rows = []
            for c in compositions(size):
                if len(c) < 2:
                    continue
                weight = self.growth.copy()
                for part in c:
                    weight *= self.totals[part]
                rows.append((c, recursion.coefficient(len(c)), self.grid.cumulative(weight)))
            self.tables[size] = rows
            self.totals[size] = sum(w * I for _, w, I in rows) / self.growth

    def total(self, t: Optional[float] = None) -> float:
        """M̂^{k,t}[1]."""
        return self.grid.at(self.totals[self.k], self.grid.t if t is None else t)

    def sample(self, size: int, horizon: float, rng: np.random.Generator) -> np.ndarray:
        if size == 1:
            return np.zeros((1, 1))
        rows = self.tables[size]
        masses = np.array([w * self.grid.at(I, horizon) for _, w, I in rows])
        choice = int(rng.choice(len(rows), p=masses / masses.sum()))
        c, _, I = rows[choice]
        target = rng.random() * self.grid.at(I, horizon)
        depth = min(float(np.interp(target, I, self.grid.points)), horizon)
        subs = [self.sample(part, depth, rng) for part in c]
        return reconstruct(depth, c, subs).entries


def sample_planar(mech: BranchingMechanism, k: int, t: float, n: int,
                  rng: np.random.Generator) -> List[np.ndarray]:
    """n مصفوفة مستوية k×k من M̂^{k,t}/M̂^{k,t}[1]."""
    table = _PlanarMomentTable(mech, k, t)
    return [table.sample(k, t, rng) for _ in range(n)]


# ========== Unplanarization ==========

def _as_callable(G: MatrixFunctional) -> Callable[[np.ndarray], float]:
    if isinstance(G, (Constant, MarkPolynomial, ProductFunctional)):
        return lambda U: eval_functional(G, U)
    return G


def _breakpoints(G: MatrixFunctional) -> Tuple[float, ...]:
    if isinstance(G, (Constant, MarkPolynomial, ProductFunctional)):
        return G.breakpoints()
    return ()


def unplanarize(mech: BranchingMechanism, k: int, t: float, G: MatrixFunctional,
                n: int = 4000, rng: Optional[np.random.Generator] = None,
                flow: Optional[LaplaceFlow] = None) -> Estimate:
    """
    Σ_P M^{k,t}[G∘P] على كل تبديلات [k] مع M = M̂/ū_t.

    k ≤ 2 بالتكامل العددي؛ k ≥ 3 بمونت كارلو عبر sample_planar
    (جمع كامل على التبديلات حتى 4! وإلا تبديل عشوائي مضروب في k!).

    Raises:
        CombinatorialBlowupError: إذا كان k > 8
    """
    if k > MAX_UNPLANAR_K:
        raise CombinatorialBlowupError('Unplanarization is limited to k <= 8', k=k)
    _require_moments(mech)
    flow = flow or LaplaceFlow(mech)
    ubar = flow.ubar(t)
    evaluate = _as_callable(G)
    b = mech.b

    if k == 1:
        return Estimate.exact(math.exp(-b * t) * evaluate(np.zeros((1, 1))) / ubar)

    if k == 2:
        def integrand(s):
            return math.exp(-b * (t - s)) * math.exp(-2.0 * b * s) * evaluate(np.array([[0.0, s], [s, 0.0]]))

        points = [p for p in _breakpoints(G) if 0 < p < t] or None
        value, _ = integrate.quad(integrand, 0.0, t, points=points, limit=200, epsabs=1e-12, epsrel=1e-10)
        planar = mech.moment_coefficient(2) / 2.0 * value / ubar
        return Estimate.exact(2.0 * planar)

    table = _PlanarMomentTable(mech, k, t)
    scale = table.total() / ubar
    if isinstance(G, Constant):
        return Estimate.exact(math.factorial(k) * G.value * scale)
    rng = rng or np.random.default_rng()
    perms = list(itertools.permutations(range(k))) if math.factorial(k) <= EXHAUSTIVE_PERMUTATIONS else None
    samples = np.empty(n)
    for i in range(n):
        U = table.sample(k, t, rng)
        if perms is not None:
            samples[i] = sum(evaluate(permute(U, P)) for P in perms)
        else:
            samples[i] = math.factorial(k) * evaluate(permute(U, rng.permutation(k)))
    return Estimate.from_samples(samples).scaled(scale)


# ========== Pair moment oracle ==========

@dataclass(frozen=True)
class PairMomentCheck:
    t: float
    probe: float
    monte_carlo: Estimate
    truncated: float
    full: float

    @property
    def z(self) -> float:
        return self.monte_carlo.z_against(self.truncated)

    def to_dict(self) -> dict:
        return {
            't': self.t, 'probe': self.probe, 'monte_carlo': self.monte_carlo.to_dict(),
            'truncated': self.truncated, 'full': self.full, 'z': self.z,
        }


def pair_moment_check(mech: BranchingMechanism, t: float, n: int, rng: np.random.Generator,
                      flow: Optional[LaplaceFlow] = None) -> PairMomentCheck:
    """
    E[Σ_{v≠w}ϑ̂_vϑ̂_w]·e^{2bt}/ū_t² مقابل Σ_P M^{2,t}[1{u > t − s′}].

    الأزواج المنفصلة عند المسبار s′ هي التي عمق سلفها المشترك أكبر من t − s′.
    """
    flow = flow or LaplaceFlow(mech)
    ubar = flow.ubar(t)
    forest = simulate_forest(ReducedRates(flow, t), n, rng, t=t)
    probe = probe_time(t)
    samples = offdiagonal_mass(forest, probe) * math.exp(2.0 * mech.b * t) / ubar ** 2
    truncated = unplanarize(mech, 2, t, ProductFunctional.uniform((1, 1), DepthIndicator(t - probe)), flow=flow)
    full = unplanarize(mech, 2, t, Constant(), flow=flow)
    check = PairMomentCheck(t, probe, Estimate.from_samples(samples), truncated.value, full.value)
    logger.info(f'Pair moment at t={t:g}: MC={check.monte_carlo.value:.5f} expected={check.truncated:.5f} z={check.z:.2f}')
    return check
