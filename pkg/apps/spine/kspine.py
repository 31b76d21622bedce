"""
قياسات k-spine المنحازة: مونت كارلو المتداخل والتربيع العددي
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. k_spine: M^{k,t}_x[G] بالتعريف التكراري (زمن التفرع u منتظم طبقياً، ثم ابنان مستقلان)
   بما في ذلك الشكل العنقودي لـ ε > 0
2. reversed_moment_table: M←^{k,∞}_z[1] = ∫G←(z,y)h←(y)Σ_p M←^p M←^{k−p}(y)dy على شبكة
3. k_spine_reversed: المسار التربيعي مقابل E_z[(W←_T)^k]/(k!h←(z))
4. jump_moment: m̂_{k,(N,A)} عند أطوال منتهية و m̂_{k,(∞,A)} بالتربيع
5. recursion_endpoint: m̂₂ يغذي تكرار CSBP مقابل M̂_Π^{2,t}[1] المعاد تحجيمه
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from apps.bbm.services import run_reversed
from apps.core.stats import Estimate, ratio
from apps.csbp.mechanisms import BranchingMechanism
from apps.csbp.moments import csbp_moments
from apps.spectral.exceptions import RegimeError
from apps.spectral.potentials import Potential
from apps.spectral.services import (
    Regime, ReversedQuantities, limit_solution, sample_pi, scale_for_length, solve_slp,
)
from apps.ultrametric.functionals import Constant, Functional, MarkPolynomial, ProductFunctional

from .exceptions import InconsistentEstimateError, SpineConfigError
from .services import SpineConfig, spine_endpoints

logger = logging.getLogger('spine')

MAX_SPINES = 4
BUDGET_DECAY = 4
CONSISTENCY_Z = 4.0

# ========== Leaf functions ==========
# كل ورقة تُستدعى بـ (positions, owners, budget, rng) حيث owners فهرس العينة العليا لكل موضع.


class _LeafConstant:
    """دالة علامة ثابتة (لا تحتاج محاكاة)."""

    def __init__(self, value: float = 1.0):
        self.value = value

    def __call__(self, positions, owners, budget, rng):
        return np.full(positions.shape, self.value)


class _LeafMark:
    def __init__(self, g: Callable):
        self.g = g

    def __call__(self, positions, owners, budget, rng):
        return np.asarray(self.g(positions), dtype=float)


class _LeafSubtree:
    """قيمة الشجرة الفرعية M^{p,s}_X[F] عند علامة الورقة X، مع أفق s خاص بكل عينة عليا."""

    def __init__(self, engine: '_NestedEstimator', G: Functional, size: int, horizons: np.ndarray):
        self.engine, self.G, self.size, self.horizons = engine, G, size, horizons

    def __call__(self, positions, owners, budget, rng):
        return self.engine.functional(self.G, self.size, positions, self.horizons[owners], budget, rng)


# ========== Nested estimator ==========

class _NestedEstimator:
    """
    يقدّر M^{k,t}_{x_i}[·] لمجموعة نقاط بداية وآفاق معاً.

    عند كل عقدة: لكل بداية budget عينة من زمن التفرع u (طبقي على [0, t])، عمود فقري حتى t−u،
    ثم تقديرات الابنين المستقلة بميزانية budget/4.
    """

    def __init__(self, cfg: SpineConfig):
        self.cfg = cfg

    def _branch(self, xs: np.ndarray, ts: np.ndarray, budget: int, rng: np.random.Generator):
        m = xs.size
        strata = (np.arange(budget)[None, :] + rng.random((m, budget))) / budget
        u = (ts[:, None] * strata).reshape(-1)
        t_rep = np.repeat(ts, budget)
        starts = np.repeat(xs, budget)
        ends = spine_endpoints(self.cfg, starts, t_rep - u, rng)
        weight = t_rep * np.exp(-self.cfg.w * (t_rep - u)) * self.cfg.rate(ends) * self.cfg.h(ends)
        return u, ends, weight

    @staticmethod
    def _child_budget(budget: int) -> int:
        return max(1, budget // BUDGET_DECAY)

    def marked(self, leaves: Sequence[Callable], xs: np.ndarray, ts: np.ndarray, owners: np.ndarray,
               budget: int, rng: np.random.Generator, reduce: bool = True) -> np.ndarray:
        """M^{j,t}_x[∏φ_i(X_i)] على كل الأشكال المستوية."""
        j = len(leaves)
        if j == 1:
            leaf = leaves[0]
            if isinstance(leaf, _LeafConstant):
                return leaf.value * np.exp(-self.cfg.w * ts)
            ends = spine_endpoints(self.cfg, xs, ts, rng)
            return np.exp(-self.cfg.w * ts) * leaf(ends, owners, budget, rng)
        u, ends, weight = self._branch(xs, ts, budget, rng)
        below = np.repeat(owners, budget)
        child = self._child_budget(budget)
        total = np.zeros_like(u)
        for n in range(1, j):
            left = self.marked(leaves[:n], ends, u, below, child, rng)
            right = self.marked(leaves[n:], ends, u, below, child, rng)
            total += left * right
        samples = (weight * total).reshape(xs.size, budget)
        return samples.mean(axis=1) if reduce else samples

    def functional(self, G: Functional, k: int, xs: np.ndarray, ts: np.ndarray, budget: int,
                   rng: np.random.Generator, reduce: bool = True) -> np.ndarray:
        owners = np.arange(xs.size)
        if isinstance(G, Constant):
            if k == 1:
                value = G.value * np.exp(-self.cfg.w * ts)
                return value if reduce else value[:, None]
            leaves = [_LeafConstant()] * k
            return G.value * self.marked(leaves, xs, ts, owners, budget, rng, reduce)
        if isinstance(G, MarkPolynomial):
            value = self.marked([_LeafMark(G)], xs, ts, owners, budget, rng)
            return value if reduce else value[:, None]
        if G.size != k:
            raise SpineConfigError('Functional size does not match k', k=k, size=G.size)
        if k == 1:
            value = float(G.depth(0.0)) * self.functional(G.children[0], 1, xs, ts, budget, rng)
            return value if reduce else value[:, None]
        if G.epsilon > 0:
            return self._clustered(G, xs, ts, budget, rng, reduce)
        if len(G.composition) != 2:
            zeros = np.zeros((xs.size, budget))
            return zeros.mean(axis=1) if reduce else zeros
        u, ends, weight = self._branch(xs, ts, budget, rng)
        child = self._child_budget(budget)
        (n1, n2), (F1, F2) = G.composition, G.children
        left = self.functional(F1, n1, ends, u, child, rng)
        right = self.functional(F2, n2, ends, u, child, rng)
        samples = (weight * np.asarray(G.depth(u), dtype=float) * left * right).reshape(xs.size, budget)
        return samples.mean(axis=1) if reduce else samples

    def _clustered(self, G: ProductFunctional, xs, ts, budget, rng, reduce):
        """
        الشكل العنقودي: التفرع الأول عند u، ثم نافذة طولها min(ε, u) يتحول فيها الجذر
        إلى |c| علامة، ومن كل علامة شجرة فرعية بعمق u − min(ε, u).
        """
        u, ends, weight = self._branch(xs, ts, budget, rng)
        child = self._child_budget(budget)
        window = np.minimum(G.epsilon, u)
        depth_left = u - window
        leaves = [_LeafSubtree(self, F, size, depth_left) for size, F in zip(G.composition, G.children)]
        owners = np.arange(u.size)
        total = np.zeros_like(u)
        for j in range(1, len(leaves)):
            left = self.marked(leaves[:j], ends, window, owners, child, rng)
            right = self.marked(leaves[j:], ends, window, owners, child, rng)
            total += left * right
        samples = (weight * np.asarray(G.depth(u), dtype=float) * total).reshape(xs.size, budget)
        return samples.mean(axis=1) if reduce else samples


# ========== k-spine ==========

@dataclass(frozen=True)
class KSpineEstimate:
    """تقدير M^{k,t}_x[G] مع شجرة الميزانيات لكل مستوى."""
    value: float
    stderr: float
    k: int
    t: float
    levels: Tuple[int, ...]
    target_stderr: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.target_stderr is None or self.stderr <= self.target_stderr

    @property
    def estimate(self) -> Estimate:
        return Estimate(self.value, self.stderr, self.levels[0] if self.levels else 0)

    def to_dict(self) -> dict:
        return {
            'value': self.value, 'stderr': self.stderr, 'k': self.k, 't': self.t,
            'levels': list(self.levels), 'converged': self.converged,
        }


def budget_levels(n: int, k: int) -> Tuple[int, ...]:
    levels = [n]
    for _ in range(k - 2):
        levels.append(max(1, levels[-1] // BUDGET_DECAY))
    return tuple(levels)


def k_spine(cfg: SpineConfig, x0: float, k: int, t: float, G: Optional[Functional] = None, n: int = 1000,
            rng: Optional[np.random.Generator] = None, target_stderr: Optional[float] = None) -> KSpineEstimate:
    """
    M^{k,t}_x[G] بمونت كارلو متداخل؛ k=1 مع G ثابت مغلق: e^{−wt}.

    Raises:
        SpineConfigError: إذا كان k خارج [1, 4] أو x0 خارج المجال
    """
    if not 1 <= k <= MAX_SPINES:
        raise SpineConfigError('k must lie in [1, 4]', k=k)
    cfg.check_start(x0)
    G = G if G is not None else Constant()
    rng = rng if rng is not None else np.random.default_rng()
    engine = _NestedEstimator(cfg)
    xs, ts = np.full(n, float(x0)), np.full(n, float(t))
    if k == 1 and isinstance(G, Constant):
        return KSpineEstimate(G.value * math.exp(-cfg.w * t), 0.0, 1, t, (), target_stderr)
    if k == 1:
        samples = engine.functional(G, 1, xs, ts, 1, rng)
    else:
        samples = engine.functional(G, k, xs[:1], ts[:1], n, rng, reduce=False)[0]
    estimate = Estimate.from_samples(samples)
    result = KSpineEstimate(estimate.value, estimate.stderr, k, t, budget_levels(n, k), target_stderr)
    if not result.converged:
        logger.warning(f'k-spine budget exhausted: stderr {result.stderr:.3g} above target {target_stderr:.3g}')
    return result


def scaled_k_spine(cfg: SpineConfig, k: int, t: float, N: float, gamma: float, n: int,
                   rng: np.random.Generator, starts: Optional[np.ndarray] = None) -> KSpineEstimate:
    """M̂_Π^{k,t}[1] = E_Π[M^{k,Nt}_x[1]]/N^{γ(k−1)}، عينة واحدة لكل بداية من Π."""
    if not 1 <= k <= MAX_SPINES:
        raise SpineConfigError('k must lie in [1, 4]', k=k)
    starts = sample_pi(cfg.solution, n, rng) if starts is None else np.asarray(starts, dtype=float)
    horizons = np.full(starts.size, float(N) * t)
    samples = _NestedEstimator(cfg).functional(Constant(), k, starts, horizons, 1, rng)
    estimate = Estimate.from_samples(samples).scaled(float(N) ** (-gamma * (k - 1)))
    return KSpineEstimate(estimate.value, estimate.stderr, k, t, (starts.size,))


# ========== Reversed moments ==========

@dataclass(frozen=True)
class ReversedMomentTable:
    """M←^{k,∞}(z) على شبكة لكل k ≤ k_max."""
    z: np.ndarray
    moments: Tuple[np.ndarray, ...]

    def at(self, k: int, z) -> np.ndarray:
        return np.interp(z, self.z, self.moments[k - 1])

    def pair_sum(self, k: int) -> np.ndarray:
        """Σ_{p=1}^{k−1} M←^p M←^{k−p} على الشبكة."""
        return sum(self.moments[p - 1] * self.moments[k - p - 1] for p in range(1, k))


def _grid_limit(rq: ReversedQuantities) -> float:
    peak = math.log(rq.alpha) / (2.0 * rq.beta)
    decay = [rq.mu - rq.beta]
    if rq.mu > 3.0 * rq.beta:
        decay.append(rq.mu - 3.0 * rq.beta)
    return peak + 40.0 / min(decay)


def reversed_moment_table(rq: ReversedQuantities, k_max: int, points: int = 40001,
                          z_max: Optional[float] = None) -> ReversedMomentTable:
    """
    M←^{1}=1 و M←^{k}(z) = ∫₀^∞ G←(z,y)h←(y)Σ_p M←^pM←^{k−p}(y)dy.

    G←(z,y) = sinh²(βy)·c(z∨y) مع c(s) = (coth βs − 1)/β، فالتكامل يُفصل إلى
    c(z)∫₀^z sinh²(βy)g + ∫_z^∞ G←(y,y)g، وكلاهما تكامل تراكمي واحد.
    """
    if rq.beta <= 0:
        raise RegimeError('Reversed moments need beta > 0', beta=rq.beta)
    z_max = z_max or _grid_limit(rq)
    z = np.linspace(0.0, z_max, points)
    b = rq.beta
    sinh2 = np.sinh(b * z) ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        c = np.where(z > 0, 2.0 / (b * np.expm1(2.0 * b * z)), 0.0)
    diagonal = rq.green(np.maximum(z, 1e-300), np.maximum(z, 1e-300))
    h = rq.h(z)
    moments: List[np.ndarray] = [np.ones_like(z)]
    for k in range(2, k_max + 1):
        g = h * sum(moments[p - 1] * moments[k - p - 1] for p in range(1, k))
        below = integrate.cumulative_simpson(sinh2 * g, x=z, initial=0.0)
        above_cum = integrate.cumulative_simpson(diagonal * g, x=z, initial=0.0)
        moments.append(c * below + (above_cum[-1] - above_cum))
    return ReversedMomentTable(z, tuple(moments))


@dataclass(frozen=True)
class ReversedKSpine:
    """المساران المستقلان لـ M←^{k,∞}_z[1]."""
    z: float
    k: int
    quadrature: float
    monte_carlo: Estimate
    horizon: float

    @property
    def z_score(self) -> float:
        return self.monte_carlo.z_against(self.quadrature)

    @property
    def consistent(self) -> bool:
        return abs(self.z_score) <= CONSISTENCY_Z

    def to_dict(self) -> dict:
        return {
            'z': self.z, 'k': self.k, 'quadrature': self.quadrature,
            'monte_carlo': self.monte_carlo.value, 'stderr': self.monte_carlo.stderr,
            'horizon': self.horizon, 'z_score': self.z_score, 'consistent': self.consistent,
        }


def k_spine_reversed(rq: ReversedQuantities, z: float, k: int, n: int, rng: np.random.Generator,
                     horizon: Optional[float] = None, table: Optional[ReversedMomentTable] = None,
                     strict: bool = False, dt: Optional[float] = None) -> ReversedKSpine:
    """
    (أ) تربيع دالة Green عند t = ∞، (ب) E_z[(W←_T)^k]/(k!h←(z)) بالمحاكاة.

    Raises:
        InconsistentEstimateError: إذا اختلف المساران بأكثر من 4σ و strict
    """
    if z <= 0:
        raise SpineConfigError('Reversed spine start must be positive', z=z)
    if not 1 <= k <= MAX_SPINES:
        raise SpineConfigError('k must lie in [1, 4]', k=k)
    horizon = horizon or 20.0 / rq.beta
    table = table or reversed_moment_table(rq, k)
    quadrature = float(table.at(k, z))
    outcome = run_reversed(rq, z, horizon, rng, n_replicates=n, dt=dt)
    scale = 1.0 / (math.factorial(k) * float(rq.h(z)))
    monte_carlo = Estimate.from_samples(outcome.W[-1] ** k).scaled(scale)
    result = ReversedKSpine(z, k, quadrature, monte_carlo, horizon)
    if not result.consistent:
        logger.warning(f'Reversed k-spine routes disagree at z={z:g}, k={k}: z-score {result.z_score:.2f}')
        if strict:
            raise InconsistentEstimateError('Reversed k-spine routes disagree', z_score=result.z_score, z=z, k=k)
    return result


# ========== Jump moments ==========

def limit_jump_moment(rq: ReversedQuantities, k: int, A: float, table: Optional[ReversedMomentTable] = None) -> float:
    """m̂_{k,(∞,A)} = (k!/2)A^{k−α}∫Σ_p M←^pM←^{k−p}·Π←h← dz."""
    if k < 2:
        raise SpineConfigError('Jump moments start at k = 2', k=k)
    table = table or reversed_moment_table(rq, k)
    integrand = table.pair_sum(k) * rq.pi(table.z) * rq.h(table.z)
    integral = float(integrate.simpson(integrand, x=table.z))
    return math.factorial(k) / 2.0 * A ** (k - rq.alpha) * integral


@dataclass
class JumpMoments:
    frame: pd.DataFrame
    limits: dict = field(default_factory=dict)

    def relative_gaps(self, k: int) -> np.ndarray:
        rows = self.frame[self.frame['k'] == k]
        return np.abs(rows['estimate'].to_numpy() / self.limits[k] - 1.0)


def jump_moment(potential: Potential, ks: Sequence[int], A: float, lengths: Sequence[float], n: int,
                rng: np.random.Generator, delta1: float = 0.2, dt: float = 1e-3) -> JumpMoments:
    """
    m̂_{k,(N,A)} = (k!/N^{γ(k−α)})E_Π[r·h·Σ_j M^{j,ε}[1]M^{k−j,ε}[1]] عند كل L
    (N من L_{N,A} = L و ε = (1−δ₁)L/β)، مع قيمة النهاية بالتربيع.

    Raises:
        RegimeError: خارج النظام شبه المدفوع
    """
    limit = limit_solution(potential)
    if limit.regime is not Regime.SEMI_PUSHED:
        raise RegimeError('Jump moments need the semi-pushed regime', regime=limit.regime.value)
    rq = ReversedQuantities.from_limit(limit)
    table = reversed_moment_table(rq, max(ks))
    gamma = 1.0 / (limit.alpha - 1.0)
    limits = {k: limit_jump_moment(rq, k, A, table) for k in ks}
    rows = []
    for L in lengths:
        sol = solve_slp(potential, L)
        cfg = SpineConfig.forward(sol, dt)
        engine = _NestedEstimator(cfg)
        N = scale_for_length(limit.mu, limit.beta, L, A)
        epsilon = (1.0 - delta1) * L / limit.beta
        starts = sample_pi(sol, n, rng)
        horizons = np.full(n, epsilon)
        base = cfg.rate(starts) * cfg.h(starts)
        for k in ks:
            pair_sum = np.zeros(n)
            for j in range(1, k):
                left = engine.functional(Constant(), j, starts, horizons, max(1, n // BUDGET_DECAY), rng)
                right = engine.functional(Constant(), k - j, starts, horizons, max(1, n // BUDGET_DECAY), rng)
                pair_sum += left * right
            factor = math.factorial(k) / N ** (gamma * (k - limit.alpha))
            estimate = Estimate.from_samples(base * pair_sum).scaled(factor)
            rows.append({
                'k': k, 'A': A, 'L': L, 'N': N, 'delta1': delta1, 'epsilon': epsilon,
                'estimate': estimate.value, 'stderr': estimate.stderr, 'limit': limits[k],
            })
        logger.info(f'Jump moments at L={L:g} (N={N:.3g}) done')
    return JumpMoments(pd.DataFrame(rows), limits)


# ========== Recursion endpoint ==========

@dataclass(frozen=True)
class EndpointCheck:
    """
    M̂_Π^{2,t}[1] من العمود الفقري المزدوج مقابل تكرار CSBP بـ m₂ = m̂_{2,(N,A)}.

    الآلية المغذّاة: b = wN و d = m̂₂، فالتكرار يعطي (m₂/2)∫₀ᵗe^{−b(t−s)}e^{−2bs}ds.
    """
    L: float
    N: float
    A: float
    t: float
    spine: Estimate
    recursion: Estimate
    limit: float

    @property
    def z(self) -> float:
        return self.spine.z_against(self.recursion)

    @property
    def consistent(self) -> bool:
        return abs(self.z) <= CONSISTENCY_Z

    @property
    def spine_to_recursion(self) -> Estimate:
        return ratio(self.spine, self.recursion)

    @property
    def limit_gap(self) -> float:
        return abs(self.spine.value / self.limit - 1.0)

    def to_dict(self) -> dict:
        return {
            'L': self.L, 'N': self.N, 'A': self.A, 't': self.t,
            'spine': self.spine.value, 'spine_stderr': self.spine.stderr,
            'recursion': self.recursion.value, 'recursion_stderr': self.recursion.stderr,
            'limit': self.limit, 'z': self.z, 'consistent': self.consistent, 'limit_gap': self.limit_gap,
            'ratio': self.spine_to_recursion.value, 'ratio_stderr': self.spine_to_recursion.stderr,
        }


def recursion_endpoint(potential: Potential, A: float, L: float, t: float, n: int, rng: np.random.Generator,
                       dt: float = 5e-3) -> EndpointCheck:
    """
    m̂_{2,(N,A)} و m̂_{2,(∞,A)} يغذيان csbp_moments، والنتيجة تُقارن بـ M̂_Π^{2,t}[1] عند N من L.

    Raises:
        RegimeError: خارج النظام شبه المدفوع
    """
    limit = limit_solution(potential)
    if limit.regime is not Regime.SEMI_PUSHED:
        raise RegimeError('Endpoint check needs the semi-pushed regime', regime=limit.regime.value)
    gamma = 1.0 / (limit.alpha - 1.0)
    # ε = 0: the 2-spine measure integrates over every branch time
    moments = jump_moment(potential, [2], A, [L], n, rng, delta1=1.0, dt=dt)
    row = moments.frame.iloc[0]
    N = float(row['N'])
    cfg = SpineConfig.forward(solve_slp(potential, L), dt)
    b = cfg.w * N

    def feed(m2: float) -> float:
        return csbp_moments(BranchingMechanism(b=b, d=m2), 2, t, Constant())

    finite = float(row['estimate'])
    unit = feed(1.0)
    recursion = Estimate(feed(finite), float(row['stderr']) * unit, n)
    spine = scaled_k_spine(cfg, 2, t, N, gamma, n, rng).estimate
    check = EndpointCheck(L, N, A, t, spine, recursion, feed(moments.limits[2]))
    logger.info(f'Recursion endpoint at L={L:g} (N={N:.3g}): spine {spine.value:.4g}, '
                f'recursion {recursion.value:.4g}, z={check.z:.2f}')
    if not check.consistent:
        logger.warning(f'Recursion endpoint disagrees at L={L:g}: z-score {check.z:.2f}')
    return check
