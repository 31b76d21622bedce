"""
Service Layer لعملية العمود الفقري (spine)
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. SpineConfig: dζ = (v₁′/v₁)(ζ)dt + dB على (0, L) أو نسختها المعكوسة على (0, ∞)
2. simulate_spine / spine_endpoints: Euler–Maruyama مع تنظيم الانجراف قرب الحدود
3. mixing_diagnostics / stationarity_check / relaxation_trend: التقارب إلى Π
4. occupation_density: كثافة الإشغال خلف فحوص دالة Green
5. two_spine_quadrature: M²ₓ[1] من مولِّد الفروق المنتهية وتحليله الطيفي
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, linalg, stats

from apps.core.stats import Estimate, z_score
from apps.spectral.potentials import Potential
from apps.spectral.services import (
    HarmonicPair, ReversedQuantities, SpectralSolution, harmonic_pair, sample_pi, solve_slp,
)

from .exceptions import SpineConfigError

# ========== Logging Configuration ==========
logger = logging.getLogger('spine')

# ========== Constants ==========
BOUNDARY_FRACTION = 1.0 / 2048.0
DEFAULT_DT = 1e-3
MAX_HALVINGS = 6
RETRY_RATE_LIMIT = 1e-4
TV_BINS = 64


# ========== Configuration ==========

@dataclass(frozen=True)
class SpineConfig:
    """
    العمود الفقري الأمامي (من الحل الطيفي) أو المعكوس (من الصيغ المغلقة).

    قرب الحدود (ضمن δ_b) يُستبدل الانجراف بشكله المقارب 1/ζ و −1/(L−ζ)
    لأن v₁ خطية عند حافة القتل.
    """
    solution: Optional[SpectralSolution] = None
    reversed: Optional[ReversedQuantities] = None
    dt: float = DEFAULT_DT
    delta_b: float = BOUNDARY_FRACTION

    def __post_init__(self):
        if (self.solution is None) == (self.reversed is None):
            raise SpineConfigError('Exactly one of solution or reversed quantities is required')
        if not 0 < self.dt <= 0.1:
            raise SpineConfigError('Time step must lie in (0, 0.1]', dt=self.dt)
        if not 0 < self.delta_b < 0.25 * min(self.L, 4.0):
            raise SpineConfigError('Boundary guard width is too large', delta_b=self.delta_b)

    @classmethod
    def forward(cls, solution: SpectralSolution, dt: float = DEFAULT_DT) -> 'SpineConfig':
        return cls(solution=solution, dt=dt, delta_b=solution.L * BOUNDARY_FRACTION)

    @classmethod
    def for_reversed(cls, rq: ReversedQuantities, dt: float = DEFAULT_DT) -> 'SpineConfig':
        return cls(reversed=rq, dt=dt, delta_b=BOUNDARY_FRACTION)

    @property
    def is_reversed(self) -> bool:
        return self.reversed is not None

    @property
    def L(self) -> float:
        return math.inf if self.is_reversed else self.solution.L

    @property
    def w(self) -> float:
        return 0.0 if self.is_reversed else self.solution.w

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_reversed:
            return self.reversed.drift(np.maximum(x, 1e-300))
        L, db = self.L, self.delta_b
        inner = np.clip(x, db, L - db)
        value = self.solution.drift(inner)
        value = np.where(x < db, 1.0 / np.maximum(x, 1e-300), value)
        return np.where(x > L - db, -1.0 / np.maximum(L - x, 1e-300), value)

    def h(self, x) -> np.ndarray:
        return self.reversed.h(x) if self.is_reversed else self.pair.h_at(x)

    def rate(self, x) -> np.ndarray:
        if self.is_reversed:
            return np.full_like(np.asarray(x, dtype=float), 0.5)
        return self.solution.rate(x)

    @cached_property
    def pair(self) -> HarmonicPair:
        if self.is_reversed:
            raise SpineConfigError('The reversed spine has no normalised harmonic pair')
        return harmonic_pair(self.solution)

    def inside(self, x: np.ndarray) -> np.ndarray:
        return (x > 0.0) & (x < self.L)

    def near_boundary(self, x: np.ndarray) -> np.ndarray:
        return (x < self.delta_b) | (x > self.L - self.delta_b)

    def reflect(self, x: np.ndarray) -> np.ndarray:
        x = np.abs(x)
        if math.isfinite(self.L):
            x = np.where(x >= self.L, 2.0 * self.L - x, x)
        return np.clip(x, 0.5 * self.delta_b, self.L - 0.5 * self.delta_b)

    def check_start(self, x0) -> None:
        x0 = np.asarray(x0, dtype=float)
        if np.any(~self.inside(x0)):
            raise SpineConfigError('Spine start must lie inside the domain', L=self.L)


# ========== Stepping ==========

class _RetryCounter:
    def __init__(self):
        self.retries = 0
        self.moves = 0

    @property
    def rate(self) -> float:
        return self.retries / self.moves if self.moves else 0.0


def _euler(cfg: SpineConfig, x: np.ndarray, dt: np.ndarray, rng: np.random.Generator,
           counter: _RetryCounter, depth: int = 0) -> np.ndarray:
    """خطوة Euler؛ ما يخرج من المجال يُعاد بخطوتين نصفيتين، ثم يُعكس بعد MAX_HALVINGS."""
    proposal = x + cfg.drift(x) * dt + np.sqrt(dt) * rng.standard_normal(x.size)
    bad = ~cfg.inside(proposal)
    if np.any(bad):
        if depth == 0:
            counter.retries += int(bad.sum())
        if depth < MAX_HALVINGS:
            half = 0.5 * dt[bad]
            middle = _euler(cfg, x[bad], half, rng, counter, depth + 1)
            proposal[bad] = _euler(cfg, middle, half, rng, counter, depth + 1)
        else:
            proposal[bad] = cfg.reflect(proposal[bad])
    return proposal


def advance(cfg: SpineConfig, x: np.ndarray, dt: np.ndarray, rng: np.random.Generator,
            counter: Optional[_RetryCounter] = None) -> np.ndarray:
    """خطوة واحدة لكل جسيم؛ الجسيمات القريبة من الحدود تتقدم بخطوتين نصفيتين."""
    counter = counter or _RetryCounter()
    counter.moves += x.size
    near = cfg.near_boundary(x)
    out = np.empty_like(x)
    far = ~near
    if np.any(far):
        out[far] = _euler(cfg, x[far], dt[far], rng, counter)
    if np.any(near):
        half = 0.5 * dt[near]
        middle = _euler(cfg, x[near], half, rng, counter, depth=1)
        out[near] = _euler(cfg, middle, half, rng, counter, depth=1)
    return out


def _warn_retries(counter: _RetryCounter) -> None:
    if counter.rate > RETRY_RATE_LIMIT:
        logger.warning(f'Spine retry rate {counter.rate:.2e} exceeds {RETRY_RATE_LIMIT:g}')


@dataclass
class SpinePaths:
    times: np.ndarray
    positions: np.ndarray
    retry_rate: float

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


def simulate_spine(cfg: SpineConfig, x0, horizon: float, rng: np.random.Generator, n: int = 1,
                   every: Optional[int] = None) -> SpinePaths:
    """
    n مساراً مستقلاً من x0 حتى horizon، يُسجَّل الموقع كل every خطوة.

    Raises:
        SpineConfigError: إذا كان x0 خارج المجال
    """
    cfg.check_start(x0)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
    steps = int(math.ceil(horizon / cfg.dt - 1e-9))
    dt = np.full(n, horizon / steps if steps else cfg.dt)
    every = every or max(1, steps // 100)
    counter = _RetryCounter()
    times, positions = [0.0], [x.copy()]
    for index in range(1, steps + 1):
        x = advance(cfg, x, dt, rng, counter)
        if index % every == 0 or index == steps:
            times.append(index * float(dt[0]))
            positions.append(x.copy())
    _warn_retries(counter)
    return SpinePaths(np.asarray(times), np.asarray(positions), counter.rate)


def spine_endpoints(cfg: SpineConfig, xs: np.ndarray, horizons: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """ζ_{t_i} من x_i لكل i بآفاق مختلفة (الخطوة الأخيرة لكل مسار جزئية)."""
    x = np.array(xs, dtype=float)
    remaining = np.array(np.broadcast_to(horizons, x.shape), dtype=float)
    counter = _RetryCounter()
    while True:
        active = np.flatnonzero(remaining > 1e-12)
        if active.size == 0:
            break
        dt = np.minimum(cfg.dt, remaining[active])
        x[active] = advance(cfg, x[active], dt, rng, counter)
        remaining[active] -= dt
    _warn_retries(counter)
    return x


# ========== Mixing ==========

def pi_cdf(solution: SpectralSolution):
    cdf = integrate.cumulative_trapezoid(solution.v1 ** 2, solution.x, initial=0.0)
    cdf /= cdf[-1]
    return lambda v: np.interp(v, solution.x, cdf)


def total_variation(samples: np.ndarray, solution: SpectralSolution, bins: int = TV_BINS) -> float:
    """مسافة التغير الكلي بين المدرج التكراري و Π على bins خانة."""
    edges = np.linspace(0.0, solution.L, bins + 1)
    empirical = np.histogram(samples, bins=edges)[0] / max(samples.size, 1)
    target = np.diff(pi_cdf(solution)(edges))
    return 0.5 * float(np.abs(empirical - target).sum())


def mixing_diagnostics(cfg: SpineConfig, x0: float, times: Sequence[float], n: int,
                       rng: np.random.Generator) -> pd.DataFrame:
    """مسافة TV (64 خانة) وإحصائية KS إلى Π عند كل زمن."""
    if cfg.is_reversed:
        raise SpineConfigError('The reversed spine has no invariant probability measure')
    cfg.check_start(x0)
    cdf = pi_cdf(cfg.solution)
    x = np.full(n, float(x0))
    elapsed = 0.0
    rows = []
    for t in sorted(times):
        if t > elapsed:
            x = spine_endpoints(cfg, x, np.full(n, t - elapsed), rng)
            elapsed = t
        rows.append({
            't': t,
            'tv': total_variation(x, cfg.solution),
            'ks': float(stats.kstest(x, cdf).statistic),
        })
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class StationarityCheck:
    statistic: float
    pvalue: float
    threshold: float = 0.01

    @property
    def passes(self) -> bool:
        return self.pvalue > self.threshold


def stationarity_check(cfg: SpineConfig, n: int, rng: np.random.Generator, steps: int = 1) -> StationarityCheck:
    """عينة من Π تتقدم steps خطوة تبقى موزعة حسب Π (اختبار KS بعينتين)."""
    if cfg.is_reversed:
        raise SpineConfigError('The reversed spine has no invariant probability measure')
    start = sample_pi(cfg.solution, n, rng)
    evolved = spine_endpoints(cfg, start, np.full(n, steps * cfg.dt), rng)
    fresh = sample_pi(cfg.solution, n, rng)
    result = stats.ks_2samp(evolved, fresh)
    return StationarityCheck(float(result.statistic), float(result.pvalue))


@dataclass(frozen=True)
class RelaxationTrend:
    frame: pd.DataFrame
    decreasing: bool


def relaxation_trend(potential: Potential, lengths: Sequence[float], n: int, rng: np.random.Generator,
                     start_gap: float = 1.0, delta1: float = 0.2, dt: float = DEFAULT_DT) -> RelaxationTrend:
    """
    P(ζ_ε ≥ (μ−3β)/(μ−β)·L) من x0 = L − start_gap مع ε = (1−δ₁)L/β.

    الاحتمال صغير ويتناقص في L (بتسامح 3σ بين كل طولين متتاليين).
    """
    rows = []
    for L in lengths:
        sol = solve_slp(potential, L)
        if not sol.mu > 3.0 * sol.beta:
            raise SpineConfigError('Relaxation threshold needs μ > 3β', mu=sol.mu, beta=sol.beta)
        cfg = SpineConfig.forward(sol, dt)
        epsilon = (1.0 - delta1) * L / sol.beta
        level = (sol.mu - 3.0 * sol.beta) / (sol.mu - sol.beta) * L
        ends = spine_endpoints(cfg, np.full(n, L - start_gap), np.full(n, epsilon), rng)
        estimate = Estimate.from_samples((ends >= level).astype(float))
        rows.append({'L': L, 'epsilon': epsilon, 'level': level,
                     'probability': estimate.value, 'stderr': estimate.stderr})
    frame = pd.DataFrame(rows)
    p, se = frame['probability'].to_numpy(), frame['stderr'].to_numpy()
    decreasing = bool(all(z_score(p[i + 1], se[i + 1], p[i], se[i]) <= 3.0 for i in range(len(p) - 1)))
    return RelaxationTrend(frame, decreasing)


# ========== Occupation ==========

def occupation_density(cfg: SpineConfig, x0: float, y: float, horizon: float, n: int,
                       rng: np.random.Generator, bandwidth: float = 0.05, discount: float = 0.0) -> Estimate:
    """
    تقدير ∫₀^T e^{−ξt} q_t(x0, y) dt بنواة صندوقية عرضها 2·bandwidth.

    للعمود الأمامي مع ξ > 0 يقارن بـ G_ξ(x0, y)، وللمعكوس مع ξ = 0 و T كبير بـ 2·G←(x0, y).
    """
    cfg.check_start(x0)
    if bandwidth <= 0:
        raise SpineConfigError('Bandwidth must be positive', bandwidth=bandwidth)
    steps = int(math.ceil(horizon / cfg.dt - 1e-9))
    dt = horizon / steps
    x = np.full(n, float(x0))
    step_dt = np.full(n, dt)
    occupation = np.zeros(n)
    counter = _RetryCounter()
    for index in range(steps):
        t_mid = (index + 0.5) * dt
        before = np.abs(x - y) < bandwidth
        x = advance(cfg, x, step_dt, rng, counter)
        after = np.abs(x - y) < bandwidth
        occupation += 0.5 * (before + after) * math.exp(-discount * t_mid) * dt
    _warn_retries(counter)
    return Estimate.from_samples(occupation / (2.0 * bandwidth))


# ========== Two-spine quadrature ==========

@dataclass(frozen=True)
class _Generator:
    """مؤثر ½Δ + ½W بشرط Dirichlet على شبكة داخلية وتحليله الطيفي."""
    x: np.ndarray
    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def build(cls, solution: SpectralSolution, intervals: int = 800) -> '_Generator':
        L = solution.L
        grid = np.linspace(0.0, L, intervals + 1)[1:-1]
        step = L / intervals
        diagonal = -1.0 / step ** 2 + 0.5 * solution.potential(grid)
        off = np.full(grid.size - 1, 0.5 / step ** 2)
        values, vectors = linalg.eigh_tridiagonal(diagonal, off)
        return cls(grid, values, vectors)


def two_spine_quadrature(solution: SpectralSolution, x0: float, t: float, intervals: int = 800) -> float:
    """
    M²ₓ[1] = ∫₀ᵗ e^{−w(t−u)}E_x[(rh)(ζ_{t−u})]e^{−2wu}du.

    E_x[g(ζ_s)] = (e^{s(A−λ₁)}(v g))(x)/v(x) حيث A مولِّد BBM المقتول، ثم التكامل
    الزمني مغلق لكل نمط ذاتي.
    """
    if not 0 < x0 < solution.L:
        raise SpineConfigError('x0 must lie in (0, L)', x0=x0)
    gen = _Generator.build(solution, intervals)
    pair = harmonic_pair(solution)
    v = gen.vectors[:, -1]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    lam1 = gen.values[-1]
    w = solution.lambda1_inf - lam1
    weights = gen.vectors.T @ (v * solution.rate(gen.x) * pair.h_at(gen.x))
    # ∫₀ᵗ e^{−ws}e^{−2w(t−s)}e^{s(λ_j−λ₁)}ds = e^{−2wt}(e^{at}−1)/a مع a = w + λ_j − λ₁
    a = w + gen.values - lam1
    with np.errstate(divide='ignore', invalid='ignore'):
        kernel = np.where(np.abs(a * t) > 1e-12, np.expm1(a * t) / a, t)
    kernel *= math.exp(-2.0 * w * t)
    row = np.array([np.interp(x0, gen.x, gen.vectors[:, j]) for j in range(gen.values.size)])
    return float(row @ (kernel * weights)) / float(np.interp(x0, gen.x, v))
