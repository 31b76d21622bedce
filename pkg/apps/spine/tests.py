"""
اختبارات العمود الفقري وقياسات k-spine
BRLab - Branching Genealogy Laboratory
"""

import json
import math
from io import StringIO

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy import integrate

from apps.bbm.estimators import many_to_few_lhs
from apps.bbm.services import BBMConfig
from apps.core.rng import stream
from apps.spectral.exceptions import RegimeError
from apps.spectral.potentials import Potential
from apps.spectral.services import (
    ReversedQuantities, criticality, green_function, limit_solution, scale_for_length, solve_slp,
)
from apps.ultrametric.functionals import Constant, ProductFunctional

from .exceptions import InconsistentEstimateError, SpineConfigError
from .kspine import (
    ReversedMomentTable,
    jump_moment,
    k_spine,
    k_spine_reversed,
    limit_jump_moment,
    recursion_endpoint,
    reversed_moment_table,
    scaled_k_spine,
)
from .services import (
    SpineConfig,
    mixing_diagnostics,
    occupation_density,
    relaxation_trend,
    simulate_spine,
    stationarity_check,
    two_spine_quadrature,
)


def semi_pushed_reversed() -> ReversedQuantities:
    mu, beta, alpha = criticality(0.03)
    return ReversedQuantities(beta=beta, mu=mu, alpha=alpha, c_inf=1.0, v_norm2=1.0)


class SpineConfigTest(SimpleTestCase):
    """اختبارات إعداد العمود الفقري"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.zero(), 4.0)
        cls.cfg = SpineConfig.forward(cls.sol)

    def test_needs_exactly_one_source(self):
        """اختبار رفض غياب المصدر أو ازدواجه"""
        with self.assertRaises(SpineConfigError):
            SpineConfig()
        with self.assertRaises(SpineConfigError):
            SpineConfig(solution=self.sol, reversed=semi_pushed_reversed())

    def test_drift_vanishes_at_midpoint(self):
        """اختبار انعدام الانجراف عند L/2 لـ W ≡ 0"""
        self.assertAlmostEqual(float(self.cfg.drift(2.0)), 0.0, delta=1e-6)
        self.assertGreater(float(self.cfg.drift(0.5)), 0.0)
        self.assertLess(float(self.cfg.drift(3.5)), 0.0)

    def test_boundary_drift_is_asymptotic(self):
        """اختبار الانجراف 1/x قرب حافة القتل"""
        x = 0.5 * self.cfg.delta_b
        self.assertAlmostEqual(float(self.cfg.drift(x)), 1.0 / x)
        self.assertAlmostEqual(float(self.cfg.drift(4.0 - x)), -1.0 / x)

    def test_reversed_drift_tends_to_beta(self):
        """اختبار انجراف العمود المعكوس β·coth(βz)"""
        rq = semi_pushed_reversed()
        cfg = SpineConfig.for_reversed(rq)
        self.assertAlmostEqual(float(cfg.drift(200.0)), rq.beta, places=8)
        self.assertEqual(cfg.w, 0.0)

    def test_start_outside_rejected(self):
        """اختبار رفض نقطة بداية خارج المجال"""
        with self.assertRaises(SpineConfigError):
            simulate_spine(self.cfg, 4.5, 0.1, stream(0, 'spine'))

    def test_paths_stay_inside(self):
        """اختبار بقاء المسارات داخل (0, L)"""
        paths = simulate_spine(self.cfg, 0.01, 1.0, stream(1, 'spine'), n=500)
        self.assertTrue(np.all((paths.positions > 0.0) & (paths.positions < 4.0)))
        self.assertAlmostEqual(paths.times[-1], 1.0)


class MixingTest(SimpleTestCase):
    """اختبارات الخلط نحو Π"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.zero(), 4.0)
        cls.cfg = SpineConfig.forward(cls.sol)

    def test_total_variation_decreases(self):
        """اختبار تناقص مسافة TV مع الزمن"""
        frame = mixing_diagnostics(self.cfg, 0.3, [0.1, 2.0, 6.0], 4000, stream(2, 'spine-mix'))
        tv = frame['tv'].to_numpy()
        self.assertGreater(tv[0], tv[-1])
        self.assertLess(tv[-1], 0.1)
        self.assertEqual(list(frame.columns), ['t', 'tv', 'ks'])

    def test_stationarity(self):
        """اختبار بقاء Π ثابتاً بعد خطوة"""
        check = stationarity_check(self.cfg, 4000, stream(3, 'spine-stationary'))
        self.assertTrue(check.passes)

    def test_reversed_has_no_invariant_law(self):
        """اختبار رفض تشخيصات الخلط للعمود المعكوس"""
        cfg = SpineConfig.for_reversed(semi_pushed_reversed())
        with self.assertRaises(SpineConfigError):
            mixing_diagnostics(cfg, 1.0, [1.0], 10, stream(0, 'spine-mix'))

    def test_relaxation_from_right_edge(self):
        """اختبار تناقص احتمال البقاء قرب الحافة اليمنى مع L"""
        trend = relaxation_trend(Potential.step(3.0), [6.0, 10.0], 2000, stream(4, 'spine-relax'), dt=2e-3)
        self.assertEqual(len(trend.frame), 2)
        self.assertTrue(trend.decreasing)


class OccupationTest(SimpleTestCase):
    """اختبارات كثافة الإشغال مقابل دوال Green"""

    def test_forward_discounted_occupation(self):
        """اختبار ∫e^{−ξt}q_t dt = G_ξ للعمود الأمامي"""
        sol = solve_slp(Potential.zero(), 4.0)
        cfg = SpineConfig.forward(sol)
        estimate = occupation_density(cfg, 2.0, 1.5, 8.0, 3000, stream(5, 'spine-occupation'), discount=1.0)
        target = float(green_function(sol, 1.0, 2.0, 1.5))
        self.assertLess(abs(estimate.value - target), 4.0 * estimate.stderr + 0.03 * target)

    def test_reversed_occupation(self):
        """اختبار كثافة الإشغال المعكوسة = 2·G←"""
        rq = semi_pushed_reversed()
        cfg = SpineConfig.for_reversed(rq)
        estimate = occupation_density(cfg, 1.0, 1.5, 30.0, 1500, stream(6, 'spine-occupation'))
        target = 2.0 * float(rq.green(1.0, 1.5))
        self.assertLess(abs(estimate.value - target), 4.0 * estimate.stderr + 0.05 * target)

    def test_bandwidth_must_be_positive(self):
        """اختبار رفض عرض نواة غير موجب"""
        cfg = SpineConfig.forward(solve_slp(Potential.zero(), 4.0))
        with self.assertRaises(SpineConfigError):
            occupation_density(cfg, 2.0, 1.0, 1.0, 10, stream(0, 'spine'), bandwidth=0.0)


class KSpineTest(SimpleTestCase):
    """اختبارات M^{k,t}_x الأمامية"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.zero(), 4.0)
        cls.cfg = SpineConfig.forward(cls.sol)
        cls.quadrature = two_spine_quadrature(cls.sol, 2.0, 1.0)

    def test_single_spine_is_exact(self):
        """اختبار M^{1,t}[1] = e^{−wt}"""
        result = k_spine(self.cfg, 2.0, 1, 1.5)
        self.assertAlmostEqual(result.value, math.exp(-self.sol.w * 1.5))
        self.assertEqual(result.stderr, 0.0)

    def test_two_spines_match_quadrature(self):
        """اختبار k=2 مقابل التربيع الطيفي"""
        result = k_spine(self.cfg, 2.0, 2, 1.0, n=4000, rng=stream(7, 'spine-k2'))
        self.assertLess(abs(result.value - self.quadrature), 4.0 * result.stderr + 0.01 * self.quadrature)
        self.assertEqual(result.levels, (4000,))

    def test_product_functional_matches_constant(self):
        """اختبار أن التركيبة (1,1) بعمق ثابت تعطي M²[1]"""
        G = ProductFunctional.uniform((1, 1))
        result = k_spine(self.cfg, 2.0, 2, 1.0, G=G, n=4000, rng=stream(8, 'spine-k2'))
        self.assertLess(abs(result.value - self.quadrature), 4.0 * result.stderr + 0.01 * self.quadrature)

    def test_many_to_few_agreement(self):
        """اختبار E[Σ hh] = 2h(x)M² مقابل محاكاة BBM"""
        config = BBMConfig.forward(Potential.zero(), self.sol.mu, 4.0, bridge=True)
        h = self.cfg.pair.h_at
        lhs = many_to_few_lhs(config, h, 2.0, 2, 1.0, Constant(), 4000, stream(9, 'spine-mtf'))
        scale = 1.0 / (2.0 * float(h(2.0)))
        self.assertLess(abs(lhs.value * scale - self.quadrature),
                        4.0 * lhs.stderr * scale + 0.03 * self.quadrature)

    def test_three_spines_positive(self):
        """اختبار أن k=3 موجب وبمستويات ميزانية متناقصة"""
        result = k_spine(self.cfg, 2.0, 3, 0.5, n=400, rng=stream(10, 'spine-k3'))
        self.assertGreater(result.value, 0.0)
        self.assertEqual(result.levels, (400, 100))

    def test_epsilon_gap_converges(self):
        """اختبار اقتراب M³[G^ε] من M³[G⁰] مع ε → 0 للتركيبة (2,1)"""
        base = k_spine(self.cfg, 2.0, 3, 1.0, G=ProductFunctional.uniform((2, 1)), n=1000,
                       rng=stream(12, 'spine-gap'))
        gaps = []
        for epsilon in (0.6, 0.3, 0.1):
            G = ProductFunctional.uniform((2, 1), epsilon=epsilon)
            result = k_spine(self.cfg, 2.0, 3, 1.0, G=G, n=1000, rng=stream(12, 'spine-gap'))
            gaps.append(abs(base.value - result.value))
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])
        self.assertLess(gaps[2], 0.35 * base.value)

    def test_pair_gap_is_exact(self):
        """اختبار أن ε لا يغيّر التركيبة (1,1) لأن الورقتين تنفصلان دائماً"""
        G = ProductFunctional.uniform((1, 1), epsilon=0.3)
        result = k_spine(self.cfg, 2.0, 2, 1.0, G=G, n=4000, rng=stream(13, 'spine-gap'))
        self.assertLess(abs(result.value - self.quadrature), 4.0 * result.stderr + 0.01 * self.quadrature)

    def test_budget_warning(self):
        """اختبار التحذير عند عدم بلوغ الخطأ المعياري المطلوب"""
        with self.assertLogs('spine', level='WARNING'):
            result = k_spine(self.cfg, 2.0, 2, 1.0, n=50, rng=stream(11, 'spine-k2'), target_stderr=1e-9)
        self.assertFalse(result.converged)

    def test_spine_count_guard(self):
        """اختبار رفض k خارج [1, 4]"""
        with self.assertRaises(SpineConfigError):
            k_spine(self.cfg, 2.0, 5, 1.0)
        with self.assertRaises(SpineConfigError):
            k_spine(self.cfg, 4.0, 2, 1.0)


class ReversedKSpineTest(SimpleTestCase):
    """اختبارات M←^{k,∞} والعزوم المقيّسة"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.rq = semi_pushed_reversed()
        cls.table = reversed_moment_table(cls.rq, 3, points=20001)

    def test_first_moment_is_one(self):
        """اختبار M←^1 = 1 على الشبكة"""
        self.assertTrue(np.allclose(self.table.moments[0], 1.0))

    def test_second_moment_quadrature(self):
        """اختبار M←^2(z) = ∫G←(z,y)h←(y)dy"""
        rq = self.rq
        expected = integrate.quad(lambda y: float(rq.green(1.0, y) * rq.h(y)), 0.0, np.inf, limit=400)[0]
        self.assertAlmostEqual(float(self.table.at(2, 1.0)), expected, delta=1e-4 * expected)

    def test_reversed_first_moment_by_both_routes(self):
        """اختبار k=1: التربيع والمحاكاة يعطيان 1"""
        result = k_spine_reversed(self.rq, 1.0, 1, 1000, stream(12, 'spine-reversed'), horizon=5.0, table=self.table)
        self.assertAlmostEqual(result.quadrature, 1.0)
        self.assertTrue(result.consistent)

    def test_strict_disagreement_raises(self):
        """اختبار رفع الخطأ عند تعارض المسارين"""
        wrong = ReversedMomentTable(self.table.z, (5.0 * self.table.moments[0],))
        with self.assertRaises(InconsistentEstimateError):
            k_spine_reversed(self.rq, 1.0, 1, 500, stream(13, 'spine-reversed'), horizon=2.0, table=wrong, strict=True)

    def test_reversed_start_must_be_positive(self):
        """اختبار رفض z ≤ 0"""
        with self.assertRaises(SpineConfigError):
            k_spine_reversed(self.rq, 0.0, 1, 10, stream(0, 'spine-reversed'))

    def test_jump_moment_scaling_in_A(self):
        """اختبار m̂_{k,(∞,2A)}/m̂_{k,(∞,A)} = 2^{k−α}"""
        for k in (2, 3):
            ratio = limit_jump_moment(self.rq, k, 2.0, self.table) / limit_jump_moment(self.rq, k, 1.0, self.table)
            self.assertAlmostEqual(ratio, 2.0 ** (k - self.rq.alpha), places=10)

    def test_jump_moment_starts_at_two(self):
        """اختبار رفض k < 2"""
        with self.assertRaises(SpineConfigError):
            limit_jump_moment(self.rq, 1, 1.0, self.table)


class JumpMomentTest(SimpleTestCase):
    """اختبارات عزوم القفز عند أطوال منتهية"""

    def test_frame_and_limits(self):
        """اختبار جدول m̂_{2,(N,A)} مع قيمة النهاية"""
        moments = jump_moment(Potential.step(3.0), [2], 1.0, [6.0, 8.0], 5000, stream(14, 'spine-jump'))
        frame = moments.frame
        self.assertEqual(len(frame), 2)
        self.assertTrue(np.all(frame['estimate'] > 0.0))
        self.assertTrue(np.all(frame['limit'] == moments.limits[2]))
        self.assertEqual(moments.relative_gaps(2).shape, (2,))

    def test_pulled_regime_rejected(self):
        """اختبار رفض النظام المسحوب"""
        with self.assertRaises(RegimeError):
            jump_moment(Potential.zero(), [2], 1.0, [6.0], 10, stream(0, 'spine-jump'))

    def test_gap_to_limit_shrinks_with_length(self):
        """اختبار تناقص |m̂_{2,(N,A)}/m̂_{2,(∞,A)} − 1| مع L"""
        moments = jump_moment(Potential.step(3.0), [2], 1.0, [5.0, 9.0], 40000, stream(16, 'spine-jump'))
        gaps = moments.relative_gaps(2)
        self.assertLess(gaps[1], gaps[0])


class RecursionEndpointTest(SimpleTestCase):
    """اختبارات اتساق نهاية التكرار بين BBM و CSBP"""

    def test_rescaled_two_spine_matches_recursion(self):
        """اختبار M̂_Π^{2,t}[1] مقابل تكرار CSBP المغذّى بـ m̂₂"""
        check = recursion_endpoint(Potential.step(3.0), 1.0, 5.0, 0.5, 10000, stream(15, 'spine-endpoint'), dt=1e-2)
        self.assertTrue(check.consistent, check.to_dict())
        spread = check.spine_to_recursion
        self.assertLess(abs(spread.value - 1.0), 4.0 * spread.stderr, check.to_dict())
        self.assertGreater(check.limit, 0.0)
        self.assertTrue(math.isfinite(check.limit_gap))
        self.assertGreater(check.N, 1.0)

    def test_pulled_regime_rejected(self):
        with self.assertRaises(RegimeError):
            recursion_endpoint(Potential.zero(), 1.0, 5.0, 0.5, 10, stream(0, 'spine-endpoint'))

    def test_scaled_moments_bounded_over_starts(self):
        """اختبار أن M̂ₓ^{2,t}[1] محدود على شبكة x ولا ينفجر مع N"""
        potential = Potential.step(3.0)
        limit = limit_solution(potential)
        gamma = 1.0 / (limit.alpha - 1.0)
        rng = stream(17, 'spine-bound')
        peaks = []
        for L in (6.0, 8.0):
            cfg = SpineConfig.forward(solve_slp(potential, L), 1e-2)
            N = scale_for_length(limit.mu, limit.beta, L, 1.0)
            values = [
                scaled_k_spine(cfg, 2, 0.1, N, gamma, 2000, rng, starts=np.full(2000, x)).value
                for x in np.linspace(0.5, L - 0.5, 5)
            ]
            self.assertTrue(np.all(np.isfinite(values)))
            self.assertTrue(np.all(np.asarray(values) >= 0.0))
            peaks.append(max(values))
        self.assertGreater(peaks[0], 0.0)
        self.assertLess(peaks[1], 3.0 * peaks[0])

    def test_scaled_spine_count_guard(self):
        cfg = SpineConfig.forward(solve_slp(Potential.step(3.0), 5.0))
        with self.assertRaises(SpineConfigError):
            scaled_k_spine(cfg, 5, 0.1, 10.0, 1.6, 10, stream(0, 'spine-bound'))


class SpineCommandTest(SimpleTestCase):
    """اختبارات أمر spine"""

    def test_mix_csv(self):
        """اختبار إخراج CSV لتشخيصات الخلط"""
        out = StringIO()
        call_command('spine', 'mix', '--L', '4', '--times', '0.5', '1', '--n', '200', stdout=out)
        lines = out.getvalue().strip().splitlines()
        self.assertEqual(lines[0], 't,tv,ks')
        self.assertEqual(len(lines), 3)

    def test_kspine_json(self):
        """اختبار إخراج JSON لتقدير k-spine"""
        out = StringIO()
        call_command('spine', 'kspine', '--L', '4', '--k', '1', '2', '--n', '200', stdout=out)
        report = json.loads(out.getvalue())
        self.assertEqual(report['mode'], 'forward')
        self.assertEqual([r['k'] for r in report['results']], [1, 2])
        self.assertIn('stderr', report['results'][1])

    def test_jump_moments_epsilon_sweep(self):
        """اختبار حساسية ε: صف لكل قيمة δ₁"""
        out = StringIO()
        call_command('spine', 'jump-moments', '--potential', 'step:3', '--k', '2', '--lengths', '6',
                     '--n', '200', '--delta1', '0.2', '0.3', stdout=out)
        frame = pd.read_csv(StringIO(out.getvalue()))
        self.assertEqual(list(frame['delta1']), [0.2, 0.3])
        self.assertGreater(frame['epsilon'].iloc[0], frame['epsilon'].iloc[1])

    def test_endpoint_csv(self):
        """اختبار إخراج CSV لاتساق نهاية التكرار"""
        out = StringIO()
        call_command('spine', 'endpoint', '--potential', 'step:3', '--lengths', '4', '--t', '0.1',
                     '--n', '300', '--dt', '0.01', stdout=out)
        frame = pd.read_csv(StringIO(out.getvalue()))
        self.assertEqual(len(frame), 1)
        self.assertIn('limit_gap', frame.columns)
        self.assertGreater(frame['N'].iloc[0], 1.0)
