"""
كتالوج التجارب
BRLab - Branching Genealogy Laboratory

كل تجربة دالة تأخذ ExperimentContext وتعيد قائمة Comparison.
المعاملات تُقرأ من قسم [params] مع قيم افتراضية تطابق معايير القبول.

التجارب الإحصائية:
    many-to-few-k1, many-to-few-k2, reduced-martingale, csbp-moment-oracle,
    entrance-law, reversed-martingale, green-check, size-tail-trend
التجارب الحتمية:
    spectral-closed-form, eigen-tail, spectral-gap, laplace-flow, bound-shapes,
    ultrametric-suite, jump-moment-scaling (مع مقارنة إحصائية عند تحديد endpoint_L)
"""

import itertools
import logging
import math
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy import integrate

from apps.bbm.estimators import tuple_sum
from apps.bbm.services import BBMConfig, reversed_green, reversed_green_quadrature, run, run_reversed
from apps.core.stats import Estimate
from apps.csbp.mechanisms import BranchingMechanism, bound_sequence_check
from apps.csbp.moments import csbp_moments, unplanarize
from apps.csbp.reduced import entrance_law_check, offdiagonal_mass, probe_time, simulate_forest
from apps.csbp.services import LaplaceFlow, ReducedRates
from apps.spectral.potentials import Potential
from apps.spectral.services import (
    fundamental_solutions, gap_scaling, green_function, harmonic_pair, reversed_quantities, solve_slp, verify_v1_tail,
)
from apps.spine.kspine import k_spine, limit_jump_moment, recursion_endpoint, reversed_moment_table
from apps.spine.services import SpineConfig, occupation_density, two_spine_quadrature
from apps.ultrametric.functionals import Constant, DepthIndicator, ProductFunctional
from apps.ultrametric.services import (
    decompose_at, depths_of, from_depths, is_ultrametric, random_planar, read_matrix_csv, reconstruct, tau,
    write_matrix_csv,
)

from .exceptions import UnknownExperimentError
from .services import Comparison, ExperimentContext
from .trends import TREND_TOLERANCE, size_tail_trend

logger = logging.getLogger('harness')

Experiment = Callable[[ExperimentContext], List[Comparison]]


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    run: Experiment
    description: str
    targets: Tuple[str, ...]


CATALOG: Dict[str, CatalogEntry] = {}


def experiment(name: str, description: str, targets: Tuple[str, ...]):
    """تسجيل دالة تجربة في الكتالوج."""
    def register(func: Experiment) -> Experiment:
        CATALOG[name] = CatalogEntry(name, func, description, targets)
        return func
    return register


def get_experiment(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownExperimentError('Unknown experiment', name=name, known=sorted(CATALOG)) from None


def catalog_names() -> List[str]:
    return sorted(CATALOG)


# ========== Replicate workers ==========
# دوال على مستوى الوحدة لتعمل داخل ProcessPoolExecutor

def _additive_chunk(size, rng, config, pair, x0, t):
    steps, _ = config.schedule(t)
    result = run(config, x0, t, rng, observables={'W': pair.h_at}, n_replicates=size, every=steps)
    return result.final('W')


def _pair_chunk(size, rng, config, pair, x0, t):
    steps, _ = config.schedule(t)
    result = run(config, x0, t, rng, n_replicates=size, every=steps)
    return np.array([tuple_sum(result.system, i, pair.h_at, 2, Constant()) for i in range(size)])


@lru_cache(maxsize=8)
def _reduced_rates(mechanism: str, t: float) -> ReducedRates:
    return ReducedRates(LaplaceFlow(BranchingMechanism.from_spec(mechanism)), t)


def _reduced_chunk(size, rng, mechanism, t, s):
    forest = simulate_forest(_reduced_rates(mechanism, t), size, rng, t=t)
    return np.stack([forest.martingale(s), forest.population(s).astype(float)])


def _offdiagonal_chunk(size, rng, mechanism, t):
    rates = _reduced_rates(mechanism, t)
    forest = simulate_forest(rates, size, rng, t=t)
    scale = math.exp(2.0 * rates.mech.b * t) / rates.flow.ubar(t) ** 2
    return offdiagonal_mass(forest, probe_time(t)) * scale


def _reversed_chunk(size, rng, rq, z, t, bridge=False):
    return run_reversed(rq, z, t, rng, n_replicates=size, bridge=bridge).W[-1]


def _reversed_green_checks(rq, pairs=((1.0, 1.0), (0.5, 2.0), (3.0, 0.7))) -> List[Comparison]:
    out = []
    for z, y in pairs:
        numeric = reversed_green_quadrature(rq, z, y)
        out.append(Comparison.deterministic(
            f'reversed Green closed form vs quadrature at ({z:g}, {y:g})',
            float(reversed_green(rq, z, y)), numeric, 1e-8 * max(1.0, abs(numeric)),
        ))
    return out


# ========== Spectral ==========

@experiment('spectral-closed-form', 'λ₁ و v₁ لـ W ≡ 0 مقابل الصيغة المغلقة', ('spectral',))
def spectral_closed_form(ctx: ExperimentContext) -> List[Comparison]:
    L = ctx.spec.get_float('L', 10.0)
    sol = solve_slp(Potential.zero(), L)
    xs = np.linspace(0.0, L, 2001)
    closed = np.sin(math.pi * xs / L) / math.sin(math.pi / L)
    sup = float(np.max(np.abs(sol.v1_at(xs) - closed)))
    return [
        Comparison.deterministic('lambda1 vs -pi^2/(2L^2)', sol.lambda1, -math.pi ** 2 / (2.0 * L * L), 1e-8),
        Comparison.deterministic('sup |v1 - sin(pi x/L)/sin(pi/L)|', sup, 0.0, 1e-6),
    ]


@experiment('eigen-tail', 'ذيل v₁ مقابل صيغة sinh للجهد المدفوع', ('spectral',))
def eigen_tail(ctx: ExperimentContext) -> List[Comparison]:
    W = Potential.from_spec(ctx.spec.get_str('potential', 'step:4'))
    sol = solve_slp(W, ctx.spec.get_float('L', 20.0))
    return [Comparison.deterministic('sup over [1, L] of |v1 - sinh form|', verify_v1_tail(sol), 0.0, 1e-6)]


@experiment('spectral-gap', 'انحدار log w على L مقابل −2β', ('spectral',))
def spectral_gap(ctx: ExperimentContext) -> List[Comparison]:
    W = Potential.from_spec(ctx.spec.get_str('potential', 'step:4'))
    result = gap_scaling(W, ctx.spec.get_floats('lengths', (10.0, 14.0, 18.0, 22.0)))
    tolerance = ctx.spec.get_float('relative_tolerance', 0.1) * abs(result.expected_slope)
    return [Comparison.deterministic('slope of log w against L vs -2 beta', result.slope, result.expected_slope, tolerance)]


@experiment('green-check', 'دالة Green للعمود الفقري: الكتلة، التناظر، الإشغال، والصيغة المعكوسة', ('spectral', 'spine', 'bbm'))
def green_check(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    W = Potential.from_spec(spec.get_str('potential', 'step:3'))
    L = spec.get_float('L', 10.0)
    sol = solve_slp(W, L)
    xi = spec.get_float('xi', 1e-3)
    x = spec.get_float('x0', L / 2.0)
    y = spec.get_float('y', L / 4.0)
    fs = fundamental_solutions(sol, xi)
    mass = xi * float(integrate.simpson(fs.green(x, sol.x), x=sol.x))
    forward = float(sol.v1_at(x) ** 2 * fs.green(x, y))
    backward = float(sol.v1_at(y) ** 2 * fs.green(y, x))
    out = [
        Comparison.deterministic('xi * integral of G(x, y) dy', mass, 1.0, 1e-4),
        Comparison.deterministic('v(x)^2 G(x,y) / v(y)^2 G(y,x)', forward / backward, 1.0, 1e-8),
    ]
    xi_mc = spec.get_float('xi_mc', 1.0)
    occupation = occupation_density(SpineConfig.forward(sol), x, y, 10.0 / xi_mc, spec.replicates,
                                    ctx.rng('occupation'), discount=xi_mc)
    out.append(Comparison.statistical('discounted spine occupation vs G', occupation,
                                      float(green_function(sol, xi_mc, x, y))))
    out.extend(_reversed_green_checks(reversed_quantities(W)))
    return out


# ========== Many-to-few ==========

def _forward_setting(ctx: ExperimentContext):
    spec = ctx.spec
    W = Potential.from_spec(spec.get_str('potential', 'zero'))
    L = spec.get_float('L', 5.0)
    sol = solve_slp(W, L)
    dt = spec.get_float('dt', 0.0) or None
    config = BBMConfig.forward(W, sol.mu, L, dt, bridge=spec.get_bool('bridge', False))
    return sol, harmonic_pair(sol), config, spec.get_float('x0', 2.0), spec.get_float('t', 2.0)


@experiment('many-to-few-k1', 'E_x[Σh(X_v)] = h(x)e^{−wt}', ('bbm', 'spectral'))
def many_to_few_k1(ctx: ExperimentContext) -> List[Comparison]:
    sol, pair, config, x0, t = _forward_setting(ctx)
    samples = ctx.samples(_additive_chunk, config, pair, x0, t)
    expected = float(pair.h_at(x0)) * math.exp(-sol.w * t)
    return [Comparison.statistical('E[sum h(X_v)] / (h(x) exp(-wt))', Estimate.from_samples(samples / expected), 1.0)]


@experiment('many-to-few-k2', 'أزواج BBM المتمايزة مقابل 2h(x)·M² من k-spine', ('bbm', 'spine'))
def many_to_few_k2(ctx: ExperimentContext) -> List[Comparison]:
    sol, pair, config, x0, t = _forward_setting(ctx)
    lhs = Estimate.from_samples(ctx.samples(_pair_chunk, config, pair, x0, t))
    spine = k_spine(SpineConfig.forward(sol), x0, 2, t, n=ctx.spec.get_int('spine_budget', 20000), rng=ctx.rng('spine'))
    quadrature = two_spine_quadrature(sol, x0, t)
    return [
        Comparison.statistical('distinct pairs vs 2 h(x) M2', lhs, spine.estimate.scaled(2.0 * float(pair.h_at(x0)))),
        Comparison.statistical('nested M2 vs spectral quadrature', spine.estimate, quadrature),
    ]


# ========== CSBP ==========

@experiment('laplace-flow', 'u_t(θ) و ū_t مقابل الصيغ المغلقة', ('csbp',))
def laplace_flow(ctx: ExperimentContext) -> List[Comparison]:
    stable = LaplaceFlow(BranchingMechanism.stable(1.0, 1.5))
    feller = LaplaceFlow(BranchingMechanism.feller(1.0))
    out = [
        Comparison.deterministic('stable u_1(1) vs 1.5^-2', stable.u(1.0, 1.0), 1.5 ** -2, 1e-6),
        Comparison.deterministic('stable u_bar_1 vs 4', stable.ubar(1.0), 4.0, 1e-5),
    ]
    for t in (0.5, 1.0, 2.0):
        out.append(Comparison.deterministic(f'Feller u_bar_{t:g} vs 2/t', feller.ubar(t), 2.0 / t, 1e-6))
    return out


@experiment('reduced-martingale', 'E[W_{s,t}] = 1 و E[Z_{s,t}] = ū_{t−s}e^{−sb}/ū_t', ('csbp',))
def reduced_martingale(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    t, s = spec.get_float('t', 1.0), spec.get_float('s', 0.5)
    out = []
    for mechanism in spec.get_str('mechanisms', 'feller:1 stable:1:1.5').split():
        data = ctx.samples(_reduced_chunk, mechanism, t, s, tag=mechanism)
        rates = _reduced_rates(mechanism, t)
        out.append(Comparison.statistical(f'{mechanism}: E[W_s,t] vs 1', Estimate.from_samples(data[0]), 1.0))
        out.append(Comparison.statistical(f'{mechanism}: E[Z_s,t] vs u_bar ratio', Estimate.from_samples(data[1]),
                                          1.0 / rates.compensation_closed_form(s)))
    return out


@experiment('csbp-moment-oracle', 'M̂^{2,t} بالتكرار مقابل كتلة ϑ⊗ϑ خارج القطر', ('csbp', 'ultrametric'))
def csbp_moment_oracle(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    mechanism = spec.get_str('mechanism', 'feller:1')
    t = spec.get_float('t', 1.0)
    mech = BranchingMechanism.from_spec(mechanism)
    flow = LaplaceFlow(mech)
    samples = ctx.samples(_offdiagonal_chunk, mechanism, t)
    G = ProductFunctional.uniform((1, 1), DepthIndicator(t - probe_time(t)))
    truncated = unplanarize(mech, 2, t, G, rng=ctx.rng('unplanarize'), flow=flow)
    recursion = csbp_moments(mech, 2, t, Constant())
    mass = Estimate.from_samples(samples)
    # pairs split after the probe time are missing from the mass
    probe_bias = abs(recursion - truncated.value)
    return [
        Comparison.deterministic('pair moment recursion', recursion, spec.get_float('expected', 0.5), 1e-6),
        Comparison.statistical('off-diagonal mass vs truncated pair moment', mass, truncated),
        Comparison.deterministic('off-diagonal mass vs pair moment recursion (probe bias allowed)', mass.value,
                                 recursion, probe_bias + spec.threshold * mass.stderr + 1e-9),
    ]


@experiment('entrance-law', 'E[e^{−θW_t}] = 1 − u_t(θū_te^{bt})/ū_t', ('csbp',))
def entrance_law(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    mech = BranchingMechanism.from_spec(spec.get_str('mechanism', 'feller:1'))
    t = spec.get_float('t', 1.0)
    flow = LaplaceFlow(mech)
    rates = ReducedRates(flow, t)
    out = []
    for index, theta in enumerate(spec.get_floats('theta', (0.5, 1.0, 2.0))):
        check = entrance_law_check(mech, t, theta, spec.replicates, ctx.rng('theta', index), flow=flow, rates=rates)
        out.append(Comparison.statistical(f'Laplace transform of W at probe time, theta={theta:g}',
                                          check.lhs, check.probe_rhs))
        out.append(Comparison.statistical(f'conditional Laplace transform at theta={theta:g}', check.conditional, check.rhs))
    return out


@experiment('bound-shapes', 'u_k ≤ u₁^k R^{k−1} 4^k بشكل شامل', ('csbp',))
def bound_shapes(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    kmax = spec.get_int('kmax', 12)
    out = []
    for R, u1 in itertools.product(spec.get_floats('R', (1.0, 2.0, 5.0)), spec.get_floats('u1', (0.5, 1.0, 2.0))):
        violations = sum(1 for _, _, _, ok in bound_sequence_check(R, u1, kmax) if not ok)
        out.append(Comparison.deterministic(f'violations at R={R:g}, u1={u1:g}', violations, 0.0, 0.5))
    return out


# ========== Ultrametric ==========

def _identity_failures(U) -> int:
    failures = 0
    if not is_ultrametric(U):
        failures += 1
    depth = tau(U)
    if U.k > 1 and depth > 0:
        parts = decompose_at(U, depth)
        if reconstruct(depth, parts.composition, parts.submatrices) != U:
            failures += 1
    return failures


@experiment('ultrametric-suite', 'from_depths، التفكيك/إعادة البناء، و CSV', ('ultrametric',))
def ultrametric_suite(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    values = spec.get_floats('values', (0.0, 1.0, 2.0, 3.0))
    exhaustive = depth_failures = roundtrip_failures = 0
    with tempfile.TemporaryDirectory() as folder:
        path = Path(folder) / 'matrix.csv'
        for k in range(1, spec.get_int('exhaustive_k', 4) + 1):
            for H in itertools.product(values, repeat=k - 1):
                U = from_depths(H)
                if not np.array_equal(depths_of(U), np.asarray(H, dtype=float)):
                    depth_failures += 1
                exhaustive += _identity_failures(U)
                write_matrix_csv(U, path)
                if read_matrix_csv(path) != U:
                    roundtrip_failures += 1
    rng = ctx.rng('random')
    random_failures = 0
    for _ in range(spec.get_int('random_cases', 10000)):
        k = int(rng.integers(2, spec.get_int('random_k', 8) + 1))
        random_failures += _identity_failures(random_planar(k, rng, values))
    return [
        Comparison.deterministic('depths_of(from_depths(H)) != H', depth_failures, 0.0, 0.5),
        Comparison.deterministic('exhaustive identity failures', exhaustive, 0.0, 0.5),
        Comparison.deterministic('CSV round-trip failures', roundtrip_failures, 0.0, 0.5),
        Comparison.deterministic('randomized identity failures', random_failures, 0.0, 0.5),
    ]


# ========== Reversed process ==========

@experiment('reversed-martingale', 'E_z[W←_t] = h←(z) ودالة Green المعكوسة', ('bbm', 'spectral'))
def reversed_martingale(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    potential = Potential.from_spec(spec.get_str('potential', 'step:3'))
    rq = reversed_quantities(potential)
    bridge = spec.get_bool('bridge', False)
    out = []
    for z, t in itertools.product(spec.get_floats('z', (1.0, 3.0)), spec.get_floats('t', (1.0, 5.0, 10.0))):
        estimate = ctx.estimate(_reversed_chunk, rq, z, t, bridge, tag=f'z={z:g},t={t:g}')
        out.append(Comparison.statistical(f'E_z[W_t] vs h(z) at z={z:g}, t={t:g}', estimate, float(rq.h(z))))
    out.extend(_reversed_green_checks(rq))
    return out


@experiment('jump-moment-scaling', 'm̂_{k,(∞,2A)}/m̂_{k,(∞,A)} = 2^{k−α}', ('spine',))
def jump_moment_scaling(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    potential = Potential.from_spec(spec.get_str('potential', 'step:3'))
    rq = reversed_quantities(potential)
    ks = [int(k) for k in spec.get_floats('k', (2, 3))]
    A = spec.get_float('A', 1.0)
    table = reversed_moment_table(rq, max(ks))
    out = []
    for k in ks:
        ratio = limit_jump_moment(rq, k, 2.0 * A, table) / limit_jump_moment(rq, k, A, table)
        out.append(Comparison.deterministic(f'k={k}: ratio vs 2^(k-alpha)', ratio, 2.0 ** (k - rq.alpha), 1e-6))
    endpoint_L = spec.get_float('endpoint_L', 0.0)
    if endpoint_L > 0:
        check = recursion_endpoint(potential, A, endpoint_L, spec.get_float('t', 0.5), spec.replicates,
                                   ctx.rng('endpoint'), dt=spec.get_float('dt', 5e-3))
        logger.info(f'Rescaled 2-spine measure is {check.limit_gap:.1%} from the N = infinity recursion')
        out.append(Comparison.statistical('rescaled 2-spine measure vs CSBP recursion fed with m_hat_2',
                                          check.spine, check.recursion))
    return out


# ========== Size tail ==========

@experiment('size-tail-trend', 'ميل log P(Z̄_t > z₀) على log N مقابل −γ', ('bbm', 'spectral'))
def size_tail(ctx: ExperimentContext) -> List[Comparison]:
    spec = ctx.spec
    trend = size_tail_trend(
        Potential.from_spec(spec.get_str('potential', 'step:3')),
        spec.get_floats('N', (1e2, 1e3, 1e4)),
        spec.get_float('A', 1.0),
        spec.get_float('t', 0.01),
        spec.get_float('x0', 1.0),
        spec.replicates,
        ctx.scheduler,
        spec.seed,
        ctx.key('trend'),
        levels=spec.get_floats('levels', (0.01, 0.02, 0.05)),
    )
    logger.info(f'Rank-size slope of surviving mass: {trend.tail_slope:.3f} (alpha={trend.alpha:.3f})')
    tolerance = spec.get_float('relative_tolerance', TREND_TOLERANCE) * trend.gamma
    return [
        Comparison.deterministic('slope of log P against log N vs -gamma', trend.slope, trend.expected_slope, tolerance),
        Comparison.deterministic('P decreasing in z0', float(trend.monotone_in_level), 1.0, 0.0),
        Comparison.deterministic('enough hits at every N', float(not trend.insufficient), 1.0, 0.0),
    ]
