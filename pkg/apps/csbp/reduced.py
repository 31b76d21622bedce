"""
محاكاة العملية المختزلة وأنسابها
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. simulate_forest: محاكاة n شجرة مختزلة مستقلة دفعة واحدة (جيلاً بعد جيل)
2. ReducedTree: عرض الشجرة بعناوين Ulam–Harris
3. genealogy_at: مصفوفة المسافات فوق المترية المستوية وأوزان ϑ̂
4. entrance_law_check: مقارنة E[e^{−θW_t}] بقانون الدخول
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from django.conf import settings

from apps.core.stats import Estimate
from apps.ultrametric.services import PlanarUltrametricMatrix, planar_order, validate

from .exceptions import CSBPError, EmptyPopulationError
from .mechanisms import BranchingMechanism
from .services import LaplaceFlow, ReducedRates

logger = logging.getLogger('csbp')

PROBE_FRACTION = 1.0 / 64.0


def probe_time(t: float) -> float:
    """زمن المسبار s′ = t − t/64 لتقدير حدود المارتينغال."""
    return t - t * PROBE_FRACTION


# ========== Data Classes ==========

@dataclass(frozen=True)
class NodeRecord:
    sigma: float
    omega: float
    K: int


@dataclass(frozen=True)
class ReducedTree:
    """شجرة مختزلة واحدة: العنوان () للجذر، والابن i للعقدة v عنوانه v + (i,)."""
    horizon: float
    until: float
    nodes: Dict[Tuple[int, ...], NodeRecord]

    def alive_at(self, s: float) -> List[Tuple[int, ...]]:
        return sorted(label for label, node in self.nodes.items() if node.sigma <= s < node.sigma + node.omega)


@dataclass
class Forest:
    """
    غابة من n شجرة مختزلة مخزنة كمصفوفات مسطحة (عقدة لكل صف).

    العقد الحية بعد until لا تُفرَّع، لذلك الاستعلامات صالحة لـ s ≤ until.
    """
    rates: ReducedRates
    n: int
    t: float
    until: float
    tree: np.ndarray
    parent: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    K: np.ndarray
    rank: np.ndarray
    _compensations: Dict[float, float] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return int(self.tree.size)

    def _check_time(self, s: float) -> None:
        if not 0 <= s <= self.until:
            raise CSBPError('Query time must lie in [0, until]', s=s, until=self.until)

    def alive(self, s: float) -> np.ndarray:
        self._check_time(s)
        return np.flatnonzero((self.birth <= s) & (s < self.death))

    def population(self, s: float) -> np.ndarray:
        """Z_{s,t} لكل شجرة."""
        return np.bincount(self.tree[self.alive(s)], minlength=self.n)

    def compensation(self, s: float) -> float:
        if s not in self._compensations:
            self._compensations[s] = self.rates.compensation(s)
        return self._compensations[s]

    def martingale(self, s: float) -> np.ndarray:
        """W_{s,t} = e^{−∫₀ˢ m}·Z_{s,t}."""
        return self.compensation(s) * self.population(s)

    def ancestor_at(self, nodes: np.ndarray, s: float) -> np.ndarray:
        """السلف الحي عند s لكل عقدة (العقد مولودة بعد s أو عنده)."""
        current = np.array(nodes, dtype=np.int64, copy=True)
        while True:
            climb = self.birth[current] > s
            if not np.any(climb):
                return current
            current[climb] = self.parent[current[climb]]

    def weights(self, s: float, probe: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        ϑ̂_v = e^{−∫₀^{s′}m}·(عدد أحفاد v عند s′) للعقد الحية عند s.

        Returns:
            (العقد الحية، الأوزان)
        """
        probe = self.until if probe is None else probe
        if probe < s:
            raise CSBPError('Probe time must not precede s', s=s, probe=probe)
        alive = self.alive(s)
        at_probe = self.alive(probe)
        ancestors = self.ancestor_at(at_probe, s)
        position = np.full(self.size, -1, dtype=np.int64)
        position[alive] = np.arange(alive.size)
        counts = np.bincount(position[ancestors], minlength=alive.size)
        return alive, self.compensation(probe) * counts

    def labels(self, nodes) -> List[Tuple[int, ...]]:
        result = []
        for node in np.atleast_1d(nodes):
            path = []
            current = int(node)
            while self.parent[current] >= 0:
                path.append(int(self.rank[current]))
                current = int(self.parent[current])
            result.append(tuple(reversed(path)))
        return result

    def ancestry(self, node: int) -> List[int]:
        chain = [int(node)]
        while self.parent[chain[-1]] >= 0:
            chain.append(int(self.parent[chain[-1]]))
        return chain[::-1]

    def view(self, index: int) -> ReducedTree:
        members = np.flatnonzero(self.tree == index)
        records = {}
        for node, label in zip(members, self.labels(members)):
            records[label] = NodeRecord(
                sigma=float(self.birth[node]),
                omega=float(self.death[node] - self.birth[node]),
                K=int(self.K[node]),
            )
        return ReducedTree(horizon=self.t, until=self.until, nodes=records)


@dataclass(frozen=True)
class Genealogy:
    """أنساب الجسيمات الحية عند s بترتيب مستوٍ."""
    s: float
    matrix: PlanarUltrametricMatrix
    weights: np.ndarray
    nodes: np.ndarray
    labels: Tuple[Tuple[int, ...], ...]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def rescaled(self, flow: LaplaceFlow, t: float) -> np.ndarray:
        """أوزان فضاء ψ-mm: ϑ·e^{bt}/ū_t."""
        return self.weights * math.exp(flow.mech.b * t) / flow.ubar(t)


# ========== Simulation ==========

def simulate_forest(rates: ReducedRates, n: int, rng: np.random.Generator,
                    t: Optional[float] = None, until: Optional[float] = None) -> Forest:
    """
    محاكاة n شجرة مختزلة مستقلة حتى الزمن until (افتراضياً s′ = t − t/64).

    Raises:
        CSBPError: إذا تجاوز عدد العقد LAB_PARTICLE_CAP
    """
    t = rates.t if t is None else float(t)
    if t > rates.t or t <= 0:
        raise CSBPError('Rates horizon must cover t', t=t, horizon=rates.t)
    until = probe_time(t) if until is None else float(until)
    if not 0 < until < t:
        raise CSBPError('until must lie in (0, t)', until=until, t=t)
    cap = int(getattr(settings, 'LAB_PARTICLE_CAP', 10_000_000))

    tree_parts, parent_parts, birth_parts, death_parts, k_parts, rank_parts = [], [], [], [], [], []
    f_tree = np.arange(n, dtype=np.int64)
    f_parent = np.full(n, -1, dtype=np.int64)
    f_birth = np.zeros(n)
    f_rank = np.zeros(n, dtype=np.int64)
    next_id = 0
    while f_tree.size:
        tau_d = rates.sample_death(t - f_birth, rng)
        death = t - tau_d
        branching = death < until
        K = np.zeros(f_tree.size, dtype=np.int64)
        K[branching] = rates.sample_offspring(tau_d[branching], rng)
        ids = next_id + np.arange(f_tree.size)
        next_id += f_tree.size

        tree_parts.append(f_tree)
        parent_parts.append(f_parent)
        birth_parts.append(f_birth)
        death_parts.append(death)
        k_parts.append(K)
        rank_parts.append(f_rank)

        total = int(K.sum())
        if next_id + total > cap:
            raise CSBPError('Reduced forest exceeded the particle cap', cap=cap, nodes=next_id + total)
        f_tree = np.repeat(f_tree, K)
        f_parent = np.repeat(ids, K)
        f_birth = np.repeat(death, K)
        offsets = np.repeat(np.cumsum(K) - K, K)
        f_rank = np.arange(total, dtype=np.int64) - offsets

    forest = Forest(
        rates=rates,
        n=n,
        t=t,
        until=until,
        tree=np.concatenate(tree_parts),
        parent=np.concatenate(parent_parts),
        birth=np.concatenate(birth_parts),
        death=np.concatenate(death_parts),
        K=np.concatenate(k_parts),
        rank=np.concatenate(rank_parts),
    )
    logger.debug(f'Simulated {n} reduced trees with {forest.size} nodes up to s={until:g}')
    return forest


def simulate_reduced(rates: ReducedRates, t: float, rng: np.random.Generator) -> ReducedTree:
    """شجرة مختزلة واحدة بعناوين Ulam–Harris."""
    return simulate_forest(rates, 1, rng, t=t).view(0)


def genealogy_at(forest: Forest, s: float, tree: int = 0, probe: Optional[float] = None) -> Genealogy:
    """
    d(v,w) = s − (σ_{v∧w} + ω_{v∧w}) للجسيمات الحية عند s في الشجرة tree.

    Raises:
        EmptyPopulationError: إذا لم يبق جسيم حي عند s
    """
    alive, weights = forest.weights(s, probe)
    mine = forest.tree[alive] == tree
    alive, weights = alive[mine], weights[mine]
    if alive.size == 0:
        raise EmptyPopulationError('No particle alive at s', s=s, tree=tree)
    labels = forest.labels(alive)
    order = planar_order(labels)
    alive, weights = alive[order], weights[order]
    labels = [labels[i] for i in order]
    chains = [forest.ancestry(node) for node in alive]
    k = alive.size
    U = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            common = 0
            for a, b in zip(chains[i], chains[j]):
                if a != b:
                    break
                common += 1
            U[i, j] = U[j, i] = s - forest.death[chains[i][common - 1]]
    return Genealogy(s=s, matrix=validate(U), weights=weights, nodes=alive, labels=tuple(labels))


def offdiagonal_mass(forest: Forest, s: Optional[float] = None) -> np.ndarray:
    """Σ_{v≠w} ϑ̂_vϑ̂_w لكل شجرة."""
    s = forest.until if s is None else s
    alive, weights = forest.weights(s)
    trees = forest.tree[alive]
    total = np.bincount(trees, weights=weights, minlength=forest.n)
    squares = np.bincount(trees, weights=weights * weights, minlength=forest.n)
    return total * total - squares


# ========== Entrance law ==========

@dataclass(frozen=True)
class EntranceCheck:
    theta: float
    lhs: Estimate
    rhs: float
    conditional: Optional[Estimate] = None
    probe_rhs: float = math.nan

    @property
    def z(self) -> float:
        return self.lhs.z_against(self.rhs)

    @property
    def conditional_z(self) -> float:
        return math.nan if self.conditional is None else self.conditional.z_against(self.rhs)

    @property
    def probe_z(self) -> float:
        return self.lhs.z_against(self.probe_rhs)


def entrance_law_check(mech: BranchingMechanism, t: float, theta: float, n_samples: int,
                       rng: np.random.Generator, flow: Optional[LaplaceFlow] = None,
                       rates: Optional[ReducedRates] = None, probe: Optional[float] = None) -> EntranceCheck:
    """
    lhs = E[e^{−θW_t}] و rhs = 1 − u_t(θū_te^{bt})/ū_t.

    lhs متوسط e^{−θW_{s′,t}} على أشجار مختزلة محاكاة حتى زمن المسبار s′.
    probe_rhs قيمته الدقيقة عند s′: 1 − u_{s′}((1 − e^{−θc})ū_{t−s′})/ū_t،
    والفرق rhs − probe_rhs هو انحياز المسبار.
    conditional: E[e^{−θW_t} | Z_{s′}] = φ_{t−s′}(θc)^{Z_{s′}} على نفس الأشجار،
    حيث c = e^{−∫₀^{s′}m} و φ_τ(λ) = 1 − u_τ(λū_τe^{bτ})/ū_τ.
    """
    flow = flow or LaplaceFlow(mech)
    if theta == 0:
        return EntranceCheck(0.0, Estimate.exact(1.0), 1.0, Estimate.exact(1.0), 1.0)

    def phi(lam: float, tau: float) -> float:
        ubar = flow.ubar(tau)
        return 1.0 - flow.u(lam * ubar * math.exp(mech.b * tau), tau) / ubar

    rhs = phi(theta, t)
    rates = rates or ReducedRates(flow, t)
    forest = simulate_forest(rates, n_samples, rng, t=t, until=probe)
    direct = np.exp(-theta * forest.martingale(forest.until))
    c = forest.compensation(forest.until)
    inner = phi(theta * c, t - forest.until)
    conditional = inner ** forest.population(forest.until)
    probe_rhs = 1.0 - flow.u(-math.expm1(-theta * c) * flow.ubar(t - forest.until), forest.until) / flow.ubar(t)
    check = EntranceCheck(float(theta), Estimate.from_samples(direct), float(rhs), Estimate.from_samples(conditional),
                          float(probe_rhs))
    logger.info(f'Entrance law at theta={theta:g}: lhs={check.lhs.value:.5f} '
                f'conditional={check.conditional.value:.5f} rhs={rhs:.5f} z={check.z:.2f}')
    return check
