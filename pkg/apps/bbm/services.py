"""
Service Layer لمحاكاة الحركة البراونية المتفرعة غير المتجانسة
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. BBMConfig: الانجراف، معدل التفرع r(x) = ½W(x) + ½، حدود القتل وخطوة الزمن
2. ParticleSystem: جسيمات عدة تكرارات في مصفوفات مسطحة مع سجل أنساب إلحاقي
3. step / run: خطوة Euler–Maruyama مع التفرع بالترقيق وتسجيل المشاهدات
4. run_reversed: العملية المعكوسة (انجراف +μ، معدل ½، قتل عند 0) ومارتينغال W←
5. mmm_sample: مصفوفة الأنساب المستوية والعلامات والأوزان
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from scipy import integrate, optimize

from apps.spectral.potentials import Potential
from apps.spectral.services import ReversedQuantities
from apps.ultrametric.services import MarkedMatrix, partition_at, validate

from .exceptions import BBMError, BoundarySingularityError, ConfigError, ExplosionError

# ========== Logging Configuration ==========
logger = logging.getLogger('bbm')

# ========== Constants ==========
MAX_DT = 1e-3
DEFAULT_RECORDS = 100
DEFAULT_PRUNE_TOL = 1e-8

Observable = Callable[[np.ndarray], np.ndarray]
PruneRule = Callable[[np.ndarray, float], np.ndarray]


def default_dt(rate_bound: float) -> float:
    return min(MAX_DT, 0.01 / rate_bound)


def particle_cap() -> int:
    return int(getattr(settings, 'LAB_PARTICLE_CAP', 10_000_000))


# ========== Configuration ==========

@dataclass(frozen=True)
class BBMConfig:
    """
    إعدادات BBM على [0, L] (أو ℝ₊ عندما L = ∞).

    Attributes:
        drift: الانجراف (−μ للعملية الأمامية، +μ للمعكوسة)
        branching: False يعطّل التفرع (r ≡ 0)
        bridge: تصحيح جسر براوني لعبور الحدود بين خطوتين (اختياري، الافتراضي قتل الموقع بعد الخطوة فقط)
    """
    potential: Potential
    drift: float
    L: float = math.inf
    dt: float = MAX_DT
    branching: bool = True
    bridge: bool = False

    def __post_init__(self):
        if not self.L > 1:
            raise ConfigError('Domain length must exceed 1', L=self.L)
        limit = default_dt(self.rate_bound)
        if not 0 < self.dt <= limit * (1.0 + 1e-12):
            raise ConfigError('Time step too large for the branching rate', dt=self.dt, limit=limit)

    @classmethod
    def forward(cls, potential: Potential, mu: float, L: float = math.inf,
                dt: Optional[float] = None, **options) -> 'BBMConfig':
        return cls(potential, -float(mu), float(L), dt or default_dt(potential.rate_bound), **options)

    @classmethod
    def reversed(cls, mu: float, dt: Optional[float] = None, **options) -> 'BBMConfig':
        zero = Potential.zero()
        return cls(zero, float(mu), math.inf, dt or default_dt(zero.rate_bound), **options)

    @property
    def rate_bound(self) -> float:
        return self.potential.rate_bound

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.L)

    def rate(self, x) -> np.ndarray:
        if not self.branching:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.potential.rate(x)

    def schedule(self, horizon: float) -> Tuple[int, float]:
        """(عدد الخطوات، الخطوة الفعلية) بحيث تنتهي المحاكاة عند horizon تماماً."""
        if horizon < 0:
            raise ConfigError('Horizon must be non-negative', horizon=horizon)
        steps = int(math.ceil(horizon / self.dt - 1e-9))
        return steps, (horizon / steps if steps else self.dt)


# ========== Particle system ==========

@dataclass
class ParticleSystem:
    """
    جسيمات n_replicates تكراراً مستقلاً.

    السجل إلحاقي: المعرّف id هو فهرس السجل، parent = −1 للجذور.
    """
    n_replicates: int
    time: float
    replicate: np.ndarray
    position: np.ndarray
    ident: np.ndarray
    exited: np.ndarray
    absorbed: np.ndarray
    next_id: int
    _parents: List[np.ndarray] = field(default_factory=list, repr=False)
    _births: List[np.ndarray] = field(default_factory=list, repr=False)
    _log: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @classmethod
    def start(cls, x0, n_replicates: int = 1) -> 'ParticleSystem':
        if n_replicates < 1:
            raise ConfigError('At least one replicate is needed', n_replicates=n_replicates)
        position = np.broadcast_to(np.asarray(x0, dtype=float), (n_replicates,)).copy()
        return cls(
            n_replicates=n_replicates,
            time=0.0,
            replicate=np.arange(n_replicates),
            position=position,
            ident=np.arange(n_replicates),
            exited=np.zeros(n_replicates, dtype=bool),
            absorbed=np.zeros((n_replicates, 2), dtype=np.int64),
            next_id=n_replicates,
            _parents=[np.full(n_replicates, -1, dtype=np.int64)],
            _births=[np.zeros(n_replicates)],
        )

    @property
    def size(self) -> int:
        return int(self.position.size)

    def population(self, inner_only: bool = False) -> np.ndarray:
        mask = ~self.exited if inner_only else slice(None)
        return np.bincount(self.replicate[mask], minlength=self.n_replicates)

    def additive(self, f: Observable) -> np.ndarray:
        """Σ_v f(X_v) لكل تكرار."""
        if not self.size:
            return np.zeros(self.n_replicates)
        return np.bincount(self.replicate, weights=f(self.position), minlength=self.n_replicates)

    def members(self, replicate: int) -> np.ndarray:
        return np.flatnonzero(self.replicate == replicate)

    def log(self) -> Tuple[np.ndarray, np.ndarray]:
        """(parent, birth) مفهرسة بالمعرّف."""
        if self._log is None:
            self._log = (np.concatenate(self._parents), np.concatenate(self._births))
        return self._log

    def _append(self, parent_rows: np.ndarray, birth: float) -> None:
        count = parent_rows.size
        ids = self.next_id + np.arange(count)
        self._parents.append(self.ident[parent_rows].copy())
        self._births.append(np.full(count, birth))
        self._log = None
        self.next_id += count
        self.replicate = np.concatenate([self.replicate, self.replicate[parent_rows]])
        self.position = np.concatenate([self.position, self.position[parent_rows]])
        self.ident = np.concatenate([self.ident, ids])
        self.exited = np.concatenate([self.exited, self.exited[parent_rows]])

    def _keep(self, mask: np.ndarray) -> None:
        self.replicate = self.replicate[mask]
        self.position = self.position[mask]
        self.ident = self.ident[mask]
        self.exited = self.exited[mask]


# ========== Stepping ==========

def _bridge_hits(rng: np.random.Generator, gap_a: np.ndarray, gap_b: np.ndarray, dt: float) -> np.ndarray:
    """احتمال عبور جسر براوني لحدٍّ بين نقطتين على بعدي gap_a و gap_b منه: exp(−2ab/dt)."""
    return rng.random(gap_a.size) < np.exp(-2.0 * gap_a * gap_b / dt)


def step(system: ParticleSystem, config: BBMConfig, rng: np.random.Generator,
         dt: Optional[float] = None, shadow: Optional[float] = None) -> ParticleSystem:
    """
    خطوة واحدة: حركة −μdt + √dt·N(0,1)، قتل عند 0 و L، ثم تفرع بالترقيق
    (اقتراح بمعدل r_max وقبول باحتمال r(x)/r_max).

    shadow: حد ظل يُعلَّم عند عبوره الجسيم وذريته (اقتران العملية على [0, shadow]).

    Raises:
        ExplosionError: إذا تجاوز عدد الجسيمات LAB_PARTICLE_CAP
    """
    dt = config.dt if dt is None else dt
    n = system.size
    if n:
        start = system.position
        end = start + config.drift * dt + math.sqrt(dt) * rng.standard_normal(n)
        low = end <= 0.0
        high = end >= config.L
        if config.bridge:
            inside = ~(low | high)
            low |= inside & _bridge_hits(rng, start, np.maximum(end, 0.0), dt)
            if config.bounded:
                inside = ~(low | high)
                high |= inside & _bridge_hits(rng, config.L - start, np.maximum(config.L - end, 0.0), dt)
        if shadow is not None:
            crossed = end >= shadow
            if config.bridge:
                crossed |= _bridge_hits(rng, np.maximum(shadow - start, 0.0), np.maximum(shadow - end, 0.0), dt)
            system.exited |= crossed
        system.position = end
        killed = low | high
        if np.any(killed):
            system.absorbed[:, 0] += np.bincount(system.replicate[low], minlength=system.n_replicates)
            system.absorbed[:, 1] += np.bincount(system.replicate[high & ~low], minlength=system.n_replicates)
            system._keep(~killed)

    m = system.size
    if m and config.branching:
        r_max = config.rate_bound
        proposed = np.flatnonzero(rng.random(m) < r_max * dt)
        if proposed.size:
            accepted = proposed[rng.random(proposed.size) * r_max < config.rate(system.position[proposed])]
            if accepted.size:
                system._append(accepted, system.time + dt)
    system.time += dt
    if system.size > particle_cap():
        raise ExplosionError('Population exceeded the particle cap', size=system.size, cap=particle_cap())
    return system


# ========== Runs ==========

@dataclass
class RunResult:
    """سلاسل زمنية للمشاهدات (صف لكل زمن تسجيل، عمود لكل تكرار)."""
    config: BBMConfig
    times: np.ndarray
    series: Dict[str, np.ndarray]
    system: ParticleSystem
    histograms: Optional[np.ndarray] = None
    bin_edges: Optional[np.ndarray] = None

    def frame(self) -> pd.DataFrame:
        """صيغة طويلة: t, replicate, Z, W_additive, absorbed0, absorbedL, ..."""
        n_times, n_rep = self.series['Z'].shape
        data = {
            't': np.repeat(self.times, n_rep),
            'replicate': np.tile(np.arange(n_rep), n_times),
        }
        for name, values in self.series.items():
            data[name] = values.reshape(-1)
        return pd.DataFrame(data)

    def final(self, name: str) -> np.ndarray:
        return self.series[name][-1]


def _record(system: ParticleSystem, observables: Mapping[str, Observable], store: Dict[str, list],
            shadow: Optional[float]) -> None:
    store['Z'].append(system.population())
    store['absorbed0'].append(system.absorbed[:, 0].copy())
    store['absorbedL'].append(system.absorbed[:, 1].copy())
    if shadow is not None:
        store['Z_inner'].append(system.population(inner_only=True))
    for name, f in observables.items():
        store[name].append(system.additive(f))


def run(config: BBMConfig, x0, horizon: float, rng: np.random.Generator,
        observables: Optional[Mapping[str, Observable]] = None, n_replicates: int = 1,
        every: Optional[int] = None, bins: Optional[int] = None, shadow: Optional[float] = None,
        system: Optional[ParticleSystem] = None) -> RunResult:
    """
    محاكاة n_replicates تكراراً من x0 حتى horizon.

    يُسجَّل Z_t والامتصاص عند الحدين دائماً، والمشاهدات الجمعية Σf(X_v) حسب الطلب،
    كل every خطوة (افتراضياً نحو 100 تسجيل) وعند النهاية.

    Raises:
        ConfigError: x0 خارج (0, L) أو مدرج تكراري على مجال غير محدود
        ExplosionError: تجاوز سقف الجسيمات
    """
    x0_arr = np.asarray(x0, dtype=float)
    if np.any(x0_arr <= 0) or np.any(x0_arr >= config.L):
        raise ConfigError('x0 must lie in (0, L)', x0=x0, L=config.L)
    if bins and not config.bounded:
        raise ConfigError('Histograms need a bounded domain')
    observables = dict(observables or {})
    system = system or ParticleSystem.start(x0_arr, n_replicates)
    steps, dt = config.schedule(horizon)
    every = every or max(1, steps // DEFAULT_RECORDS)
    names = ['Z', 'absorbed0', 'absorbedL'] + (['Z_inner'] if shadow is not None else []) + list(observables)
    store: Dict[str, list] = {name: [] for name in names}
    edges = np.linspace(0.0, config.L, bins + 1) if bins else None
    histograms, times = [], []

    def snapshot():
        times.append(system.time)
        _record(system, observables, store, shadow)
        if edges is not None:
            histograms.append(np.histogram(system.position, bins=edges)[0])

    snapshot()
    for index in range(1, steps + 1):
        step(system, config, rng, dt=dt, shadow=shadow)
        if index % every == 0 or index == steps:
            snapshot()
    logger.debug(f'BBM run to t={horizon:g}: {system.size} particles over {system.n_replicates} replicates')
    return RunResult(
        config=config,
        times=np.asarray(times),
        series={name: np.asarray(values) for name, values in store.items()},
        system=system,
        histograms=np.asarray(histograms) if edges is not None else None,
        bin_edges=edges,
    )


def advance(system: ParticleSystem, config: BBMConfig, until: float, rng: np.random.Generator) -> ParticleSystem:
    """متابعة نظام قائم حتى الزمن المطلق until."""
    remaining = until - system.time
    if remaining <= 0:
        return system
    steps, dt = config.schedule(remaining)
    for _ in range(steps):
        step(system, config, rng, dt=dt)
    return system


def coupled_runs(config: BBMConfig, x0, horizon: float, rng: np.random.Generator,
                 n_replicates: int = 1, every: Optional[int] = None) -> RunResult:
    """
    اقتران العملية على [0, L] بالعملية على ℝ₊ بضجيج مشترك.

    Z_inner هو عدد الجسيمات التي لم تعبر L هي وأسلافها، فـ Z_inner ≤ Z مسارياً.
    """
    if not config.bounded:
        raise ConfigError('Coupling needs a bounded configuration')
    half_line = replace(config, L=math.inf)
    return run(half_line, x0, horizon, rng, n_replicates=n_replicates, every=every, shadow=config.L)


# ========== Reversed process ==========

@dataclass
class ReversedRun:
    """سلاسل W←_t وأدنى موقع لكل تكرار، مع كتلة h← المحذوفة بالتقليم."""
    quantities: ReversedQuantities
    times: np.ndarray
    W: np.ndarray
    minimum: np.ndarray
    running_minimum: np.ndarray
    pruned_mass: np.ndarray
    system: ParticleSystem

    def frame(self) -> pd.DataFrame:
        n_times, n_rep = self.W.shape
        return pd.DataFrame({
            't': np.repeat(self.times, n_rep),
            'replicate': np.tile(np.arange(n_rep), n_times),
            'W_reversed': self.W.reshape(-1),
            'min_position': self.minimum.reshape(-1),
        })


def prune_by_h(rq: ReversedQuantities, tol: float = DEFAULT_PRUNE_TOL) -> PruneRule:
    """
    حذف الجسيمات البعيدة التي h←(z) < tol·sup h←.

    h← يزداد ثم يتناقص بعد قمته z* = log(α)/(2β)، فالحذف يقتصر على ما بعدها.
    """
    if not rq.mu > rq.beta:
        raise ConfigError('Pruning needs μ > β', mu=rq.mu, beta=rq.beta)
    peak = math.log(rq.alpha) / (2.0 * rq.beta) if rq.beta > 0 else 1.0 / rq.mu
    floor = tol * float(rq.h(peak))
    hi = peak + 1.0
    while float(rq.h(hi)) > floor:
        hi = peak + 2.0 * (hi - peak)
    cut = optimize.brentq(lambda z: float(rq.h(z)) - floor, peak, hi)
    return lambda positions, remaining: positions > cut


def prune_by_hitting(mu: float, level: float, tol: float = 1e-9) -> PruneRule:
    """
    حذف الجسيمات التي لا تكاد ذريتها تبلغ level قبل نهاية الأفق:
    العدد المتوقع ≤ e^{s/2 − 2μ(z − level)} < tol.
    """
    log_tol = -math.log(tol)
    return lambda positions, remaining: positions - level > (0.5 * remaining + log_tol) / (2.0 * mu)


def run_reversed(rq: ReversedQuantities, z0, horizon: float, rng: np.random.Generator,
                 n_replicates: int = 1, every: Optional[int] = None, dt: Optional[float] = None,
                 prune: Optional[PruneRule] = None, bridge: bool = False) -> ReversedRun:
    """
    العملية المعكوسة من z0 مع W←_t = Σh←(X_v(t)).

    Raises:
        ConfigError: إذا كان z0 ≤ 0
    """
    if np.any(np.asarray(z0, dtype=float) <= 0):
        raise ConfigError('Reversed process needs z0 > 0', z0=z0)
    config = BBMConfig.reversed(rq.mu, dt, bridge=bridge)
    prune = prune or prune_by_h(rq)
    system = ParticleSystem.start(z0, n_replicates)
    steps, step_dt = config.schedule(horizon)
    every = every or max(1, steps // DEFAULT_RECORDS)
    running = system.position.copy()
    pruned = np.zeros(n_replicates)
    times, W, minimum, running_minimum = [], [], [], []

    def snapshot():
        times.append(system.time)
        W.append(system.additive(rq.h))
        current = np.full(n_replicates, np.inf)
        np.minimum.at(current, system.replicate, system.position)
        minimum.append(current)
        running_minimum.append(running.copy())

    snapshot()
    for index in range(1, steps + 1):
        step(system, config, rng, dt=step_dt)
        running[system.absorbed[:, 0] > 0] = 0.0
        if system.size:
            np.minimum.at(running, system.replicate, system.position)
            drop = prune(system.position, horizon - system.time)
            if np.any(drop):
                pruned += np.bincount(system.replicate[drop], weights=rq.h(system.position[drop]),
                                      minlength=n_replicates)
                system._keep(~drop)
        if index % every == 0 or index == steps:
            snapshot()
    return ReversedRun(
        quantities=rq,
        times=np.asarray(times),
        W=np.asarray(W),
        minimum=np.asarray(minimum),
        running_minimum=np.asarray(running_minimum),
        pruned_mass=pruned,
        system=system,
    )


def reversed_green(rq: ReversedQuantities, z, y) -> np.ndarray:
    """
    G←(z,y) = v←₁(y)²∫_{z∨y}^∞ v←₁(z′)⁻²dz′ بالصيغة المغلقة.

    Raises:
        BoundarySingularityError: عند z ≤ 0 أو y ≤ 0
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(z <= 0) or np.any(y <= 0):
        raise BoundarySingularityError('Reversed Green function needs z, y > 0')
    return rq.green(z, y)


def reversed_green_quadrature(rq: ReversedQuantities, z: float, y: float) -> float:
    """التكامل المُعرِّف لـ G← عددياً (مرجع للصيغة المغلقة)."""
    if z <= 0 or y <= 0:
        raise BoundarySingularityError('Reversed Green function needs z, y > 0', z=z, y=y)
    tail, _ = integrate.quad(lambda s: float(rq.v1(s)) ** -2, max(z, y), np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return float(rq.v1(y)) ** 2 * tail


# ========== Genealogy ==========

@dataclass(frozen=True)
class MmmSample:
    """عينة mmm: مصفوفة المسافات المستوية مع المواقع كعلامات وأوزان المعاينة."""
    marked: MarkedMatrix
    size: int
    weights: np.ndarray
    ids: np.ndarray

    @property
    def matrix(self):
        return self.marked.matrix


def distance_matrix(system: ParticleSystem, ids: np.ndarray) -> np.ndarray:
    """d_t(u,v) = t − زمن انفصال سلالتي u و v."""
    parents, births = system.log()
    chains = []
    for node in ids:
        chain = [int(node)]
        while parents[chain[-1]] >= 0:
            chain.append(int(parents[chain[-1]]))
        chains.append(chain)
    k = len(chains)
    D = np.zeros((k, k))
    t = system.time
    for i in range(k):
        position = {node: index for index, node in enumerate(chains[i])}
        for j in range(i + 1, k):
            chain = chains[j]
            for depth, node in enumerate(chain):
                if node in position:
                    break
            else:
                raise BBMError('Particles from different replicates have no common ancestor')
            at = position[node]
            leave_i = births[chains[i][at - 1]] if at > 0 else t
            leave_j = births[chain[depth - 1]] if depth > 0 else t
            D[i, j] = D[j, i] = t - min(leave_i, leave_j)
    return D


def genealogical_order(D: np.ndarray, members: Optional[np.ndarray] = None) -> List[int]:
    """ترتيب أنسابي للأوراق بتقسيم متكرر عند أكبر مسافة، فتصير المصفوفة مستوية."""
    members = np.arange(D.shape[0]) if members is None else members
    if members.size <= 1:
        return members.tolist()
    sub = D[np.ix_(members, members)]
    blocks, _ = partition_at(sub, sub.max())
    if len(blocks) == 1:
        return members.tolist()
    order: List[int] = []
    for block in blocks:
        order.extend(genealogical_order(D, members[list(block)]))
    return order


def mmm_sample(system: ParticleSystem, replicate: int = 0, weights: str = 'uniform', N: float = 1.0,
               gamma: float = 1.0, h: Optional[Observable] = None) -> MmmSample:
    """
    الجسيمات الحية لتكرار واحد كفضاء mmm.

    weights: 'uniform' (1/N^γ لكل جسيم، فالكتلة الكلية Z/N^γ) أو 'h' (h(X_v)/N^γ).
    N هو مقياس المجتمع وليس عدد الجسيمات الحية.

    Raises:
        BBMError: إذا لم يبق جسيم حي
        ConfigError: إذا كان N غير موجب أو مخطط الأوزان مجهولاً
    """
    rows = system.members(replicate)
    if rows.size == 0:
        raise BBMError('No particle alive in this replicate', replicate=replicate)
    ids = system.ident[rows]
    D = distance_matrix(system, ids)
    order = genealogical_order(D)
    D = D[np.ix_(order, order)]
    rows, ids = rows[order], ids[order]
    positions = system.position[rows]
    if N <= 0:
        raise ConfigError('Population scale must be positive', N=N)
    scale = float(N) ** gamma
    if weights == 'uniform':
        w = np.full(rows.size, 1.0 / scale)
    elif weights == 'h':
        if h is None:
            raise ConfigError('h-biased weights need h')
        w = h(positions) / scale
    else:
        raise ConfigError('Unknown weight scheme', weights=weights)
    marked = MarkedMatrix(validate(D), tuple(float(x) for x in positions))
    return MmmSample(marked=marked, size=int(rows.size), weights=w, ids=ids)
