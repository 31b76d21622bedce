"""
مقدّرات مونت كارلو فوق محاكاة BBM
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. many_to_few_lhs: الطرف الأيسر من صيغة many-to-few على k-مجموعات مرتبة متمايزة
2. lambda_estimator: عزوم W←_∞ للعملية المعكوسة مع فحص الاستقرار
3. absorbed_mass_check: حد احتمال بلوغ مستوى القطع (متباينة Doob)
4. reversed_escape: احتمال اقتراب العملية المعكوسة من الصفر قبل نافذة ε
5. equilibrium_ks: مسافة Kolmogorov–Smirnov بين مواقع الجسيمات و h̃
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, optimize, stats

from apps.core.stats import Estimate, z_score
from apps.spectral.services import HarmonicPair, LimitSolution, ReversedQuantities
from apps.ultrametric.functionals import Constant, Functional, eval_functional

from .exceptions import ConfigError, HorizonTooShortError
from .services import (
    BBMConfig, ParticleSystem, advance, distance_matrix, prune_by_hitting, run, run_reversed,
)

logger = logging.getLogger('bbm')

MAX_TUPLE_SIZE = 4
PLATEAU_FRACTION = 0.9


# ========== Many-to-few ==========

def elementary_symmetric(values: np.ndarray, k: int) -> float:
    """e_k(values) بالتكرار e_j ← e_j + v·e_{j−1}."""
    e = np.zeros(k + 1)
    e[0] = 1.0
    for v in values:
        e[1:] = e[1:] + v * e[:-1]
    return float(e[k])


def tuple_sum(system: ParticleSystem, replicate: int, h: Callable, k: int, G: Functional) -> float:
    """Σ على k-مجموعات مرتبة متمايزة (v₁..v_k) من G(d_t(v), X_v)·∏h(X_{v_i})."""
    rows = system.members(replicate)
    if rows.size < k:
        return 0.0
    positions = system.position[rows]
    weights = h(positions)
    if isinstance(G, Constant):
        return G.value * math.factorial(k) * elementary_symmetric(weights, k)
    D = distance_matrix(system, system.ident[rows])
    total = 0.0
    for tup in itertools.permutations(range(rows.size), k):
        index = list(tup)
        value = eval_functional(G, D[np.ix_(index, index)], positions[index])
        if value:
            total += value * float(np.prod(weights[index]))
    return total


def many_to_few_lhs(config: BBMConfig, h: Callable, x0: float, k: int, t: float, G: Functional,
                    n: int, rng: np.random.Generator) -> Estimate:
    """
    تقدير E_x[Σ_{v متمايزة} G(d_t(v), X_v)·∏h(X_{v_i}(t))] من n تكراراً.

    Raises:
        ConfigError: إذا كان k خارج [1, 4]
    """
    if not 1 <= k <= MAX_TUPLE_SIZE:
        raise ConfigError('Tuple size must lie in [1, 4]', k=k)
    result = run(config, x0, t, rng, n_replicates=n, every=max(1, config.schedule(t)[0]))
    system = result.system
    samples = np.array([tuple_sum(system, i, h, k, G) for i in range(n)])
    logger.debug(f'many-to-few k={k} t={t:g}: {system.size} survivors over {n} replicates')
    return Estimate.from_samples(samples)


# ========== Reversed process ==========

def lambda_estimator(rq: ReversedQuantities, z_list: Sequence[float], n: int, rng: np.random.Generator,
                     horizon: Optional[float] = None, k_max: int = 4, plateau_tol: float = 0.01,
                     dt: Optional[float] = None) -> pd.DataFrame:
    """
    جدول عزوم E_z[(W←_∞)^k] لكل z مع h̃←(z)·E[W^k] و M←^{k,∞}_z[1] = E[W^k]/(k!h←(z)).

    W←_∞ يُقرَّب بـ W←_T عند T = 20/β افتراضياً.

    Raises:
        HorizonTooShortError: إذا تجاوز الانجراف النسبي في آخر عُشر من الأفق plateau_tol
    """
    horizon = horizon or 20.0 / rq.beta
    rows = []
    for z in z_list:
        outcome = run_reversed(rq, z, horizon, rng, n_replicates=n, dt=dt)
        final = outcome.W[-1]
        earlier = outcome.W[np.searchsorted(outcome.times, PLATEAU_FRACTION * horizon)]
        drift = float(np.mean(np.abs(final - earlier)) / max(np.mean(final), 1e-300))
        if drift > plateau_tol:
            raise HorizonTooShortError('Reversed martingale has not plateaued', drift=drift, z=z, horizon=horizon)
        hz = float(rq.h(z))
        h_tilde = float(rq.h_tilde(z))
        for k in range(1, k_max + 1):
            moment = Estimate.from_samples(final ** k)
            rows.append({
                'z': z,
                'k': k,
                'moment': moment.value,
                'stderr': moment.stderr,
                'scaled': h_tilde * moment.value,
                'normalized': moment.value / (math.factorial(k) * hz),
                'normalized_stderr': moment.stderr / (math.factorial(k) * hz),
                'pruned_mass': float(outcome.pruned_mass.mean()),
            })
        logger.info(f'Reversed moments at z={z:g}: E[W]={rows[-k_max]["moment"]:.4g} (h←={hz:.4g}), drift={drift:.2e}')
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class EscapeTrend:
    frame: pd.DataFrame
    decreasing: bool


def reversed_escape(rq: ReversedQuantities, lengths: Sequence[float], c: float, n: int,
                    rng: np.random.Generator, delta1: float = 0.2, dt: Optional[float] = None) -> EscapeTrend:
    """
    P(inf_{t≤ε} X ≤ 1) للعملية المعكوسة من z0 = (1−c)L مع ε = (1−δ₁)L/β.

    التناقص في L يُقبل بتسامح 3σ بين كل طولين متتاليين.
    """
    if not 0 < c < 1:
        raise ConfigError('c must lie in (0, 1)', c=c)
    rows = []
    for L in lengths:
        horizon = (1.0 - delta1) * L / rq.beta
        outcome = run_reversed(rq, (1.0 - c) * L, horizon, rng, n_replicates=n, dt=dt,
                               prune=prune_by_hitting(rq.mu, 1.0))
        hit = Estimate.from_samples((outcome.running_minimum[-1] <= 1.0).astype(float))
        rows.append({'L': L, 'z0': (1.0 - c) * L, 'epsilon': horizon, 'probability': hit.value, 'stderr': hit.stderr})
    frame = pd.DataFrame(rows)
    p, se = frame['probability'].to_numpy(), frame['stderr'].to_numpy()
    decreasing = bool(all(z_score(p[i + 1], se[i + 1], p[i], se[i]) <= 3.0 for i in range(len(p) - 1)))
    return EscapeTrend(frame, decreasing)


# ========== Absorbed mass ==========

@dataclass(frozen=True)
class AbsorbedMassCheck:
    level: float
    L: float
    estimate: Estimate
    bound: float
    slack: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            'level': self.level, 'L': self.L, 'estimate': self.estimate.value,
            'stderr': self.estimate.stderr, 'bound': self.bound, 'slack': self.slack, 'holds': self.holds,
        }


def level_length(limit: LimitSolution, level: float, start: float) -> float:
    """الموقع L > start حيث h_∞(L) = level."""
    lo = max(start, limit.edge, 1.0)
    if float(limit.h_at(lo)) >= level:
        raise ConfigError('Cutoff level is below h_∞ at the start', level=level, start=start)
    hi = lo + 1.0
    while float(limit.h_at(hi)) < level:
        hi = lo + 2.0 * (hi - lo)
    return optimize.brentq(lambda x: float(limit.h_at(x)) - level, lo, hi, xtol=1e-12)


def absorbed_mass_check(limit: LimitSolution, x0: float, N: float, A: float, horizon: float, n: int,
                        rng: np.random.Generator, cbar: float = 1.0, slack: float = 2.0,
                        dt: Optional[float] = None) -> AbsorbedMassCheck:
    """
    P_x(جسيم يبلغ L) ≤ h_∞(x)/(c̄AN^γ) حيث h_∞(L) = c̄AN^γ و γ = 1/(α−1).

    الحد يُقبل إذا كان التقدير ≤ slack·bound + 3σ.
    """
    gamma = 1.0 / (limit.alpha - 1.0)
    level = cbar * A * N ** gamma
    L = level_length(limit, level, x0)
    config = BBMConfig.forward(limit.potential, limit.mu, L, dt)
    result = run(config, x0, horizon, rng, n_replicates=n, every=max(1, config.schedule(horizon)[0]))
    estimate = Estimate.from_samples((result.final('absorbedL') > 0).astype(float))
    bound = float(limit.h_at(x0)) / level
    holds = estimate.value <= slack * bound + 3.0 * estimate.stderr
    if not holds:
        logger.warning(f'Absorbed-mass bound failed: {estimate.value:.4g} > {slack:g}×{bound:.4g}')
    return AbsorbedMassCheck(level=level, L=L, estimate=estimate, bound=bound, slack=slack, holds=holds)


# ========== Equilibrium ==========

def equilibrium_ks(config: BBMConfig, pair: HarmonicPair, x0: float, times: Sequence[float], n: int,
                   rng: np.random.Generator) -> pd.DataFrame:
    """
    إحصائية KS بين مواقع الجسيمات الحية (مجمّعة على التكرارات) والكثافة ∝ h̃ عند كل زمن.
    """
    cdf = integrate.cumulative_trapezoid(pair.h_tilde, pair.x, initial=0.0)
    cdf /= cdf[-1]
    system = ParticleSystem.start(x0, n)
    rows = []
    for t in sorted(times):
        advance(system, config, t, rng)
        positions = system.position
        if positions.size:
            result = stats.kstest(positions, lambda v: np.interp(v, pair.x, cdf))
            statistic, pvalue = float(result.statistic), float(result.pvalue)
        else:
            statistic, pvalue = math.nan, math.nan
        rows.append({'t': t, 'particles': int(positions.size), 'ks': statistic, 'pvalue': pvalue})
    return pd.DataFrame(rows)
