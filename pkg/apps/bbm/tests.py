"""
اختبارات محاكاة BBM
BRLab - Branching Genealogy Laboratory
"""

import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.test import SimpleTestCase

from apps.core.rng import stream
from apps.spectral.potentials import Potential
from apps.spectral.services import ReversedQuantities, criticality, harmonic_pair, limit_solution, solve_slp
from apps.ultrametric.functionals import Constant, ProductFunctional
from apps.ultrametric.services import is_ultrametric

from .estimators import (
    absorbed_mass_check,
    elementary_symmetric,
    equilibrium_ks,
    lambda_estimator,
    many_to_few_lhs,
    reversed_escape,
    tuple_sum,
)
from .exceptions import BBMError, BoundarySingularityError, ConfigError, HorizonTooShortError
from .services import (
    BBMConfig,
    ParticleSystem,
    coupled_runs,
    distance_matrix,
    mmm_sample,
    reversed_green,
    reversed_green_quadrature,
    run,
    run_reversed,
    step,
)


def semi_pushed_reversed() -> ReversedQuantities:
    mu, beta, alpha = criticality(0.03)
    return ReversedQuantities(beta=beta, mu=mu, alpha=alpha, c_inf=1.0, v_norm2=1.0)


class ConfigTest(SimpleTestCase):
    """اختبارات إعدادات BBM"""

    def test_short_domain_rejected(self):
        """اختبار رفض L ≤ 1"""
        with self.assertRaises(ConfigError):
            BBMConfig.forward(Potential.zero(), 1.0, 1.0)

    def test_time_step_bound(self):
        """اختبار dt ≤ min(1e−3, 0.01/r_max)"""
        W = Potential.step(39.0)
        config = BBMConfig.forward(W, 2.0, 5.0)
        self.assertAlmostEqual(config.dt, 0.0005)
        with self.assertRaises(ConfigError):
            BBMConfig.forward(W, 2.0, 5.0, dt=1e-3)

    def test_drift_signs(self):
        """اختبار اتجاه الانجراف في العمليتين"""
        self.assertEqual(BBMConfig.forward(Potential.zero(), 1.5, 5.0).drift, -1.5)
        reversed_config = BBMConfig.reversed(1.5)
        self.assertEqual(reversed_config.drift, 1.5)
        self.assertFalse(reversed_config.bounded)
        self.assertEqual(reversed_config.rate_bound, 0.5)

    def test_schedule_hits_horizon(self):
        """اختبار أن الجدول الزمني ينتهي عند الأفق تماماً"""
        config = BBMConfig.forward(Potential.zero(), 1.0, 5.0)
        steps, dt = config.schedule(0.0105)
        self.assertEqual(steps, 11)
        self.assertAlmostEqual(steps * dt, 0.0105)


class StepTest(SimpleTestCase):
    """اختبارات الخطوة الواحدة"""

    def test_killing_at_zero(self):
        """اختبار إزالة الجسيم الذي يعبر الصفر وعدّه"""
        config = BBMConfig(Potential.zero(), drift=-1e6, L=5.0, dt=1e-3)
        system = ParticleSystem.start(2.0, 3)
        step(system, config, stream(1, 'bbm-kill'))
        self.assertEqual(system.size, 0)
        self.assertEqual(system.absorbed[:, 0].tolist(), [1, 1, 1])
        self.assertEqual(system.absorbed[:, 1].tolist(), [0, 0, 0])

    def test_killing_at_L(self):
        """اختبار القتل عند الحد الأيمن"""
        config = BBMConfig(Potential.zero(), drift=1e6, L=5.0, dt=1e-3)
        system = ParticleSystem.start(2.0, 2)
        step(system, config, stream(1, 'bbm-kill-L'))
        self.assertEqual(system.absorbed[:, 1].tolist(), [1, 1])

    def test_default_step_kills_on_post_step_position(self):
        """اختبار أن الخطوة الافتراضية تقتل فقط من يقع موقعه بعد الخطوة خارج (0, L)"""
        n, dt = 20_000, 1e-3
        config = BBMConfig(Potential.zero(), drift=0.0, L=5.0, dt=dt, branching=False)
        system = ParticleSystem.start(0.01, n)
        step(system, config, stream(4, 'bbm-post-step'))
        end = 0.01 + math.sqrt(dt) * stream(4, 'bbm-post-step').standard_normal(n)
        outside = (end <= 0.0) | (end >= 5.0)
        self.assertEqual(system.size, n - int(outside.sum()))
        self.assertEqual(int(system.absorbed[:, 0].sum()), int((end <= 0.0).sum()))
        np.testing.assert_array_equal(system.position, end[~outside])

    def test_bridge_correction_kills_more(self):
        """اختبار أن تصحيح الجسر الاختياري يضيف قتلاً للجسيمات القريبة من الحد"""
        n = 20_000
        plain = ParticleSystem.start(0.01, n)
        step(plain, BBMConfig(Potential.zero(), drift=0.0, L=5.0, branching=False), stream(5, 'bbm-bridge'))
        bridged = ParticleSystem.start(0.01, n)
        step(bridged, BBMConfig(Potential.zero(), drift=0.0, L=5.0, branching=False, bridge=True),
             stream(5, 'bbm-bridge'))
        self.assertGreater(int(bridged.absorbed.sum()), int(plain.absorbed.sum()))

    def test_branching_probability_without_potential(self):
        """اختبار أن احتمال التفرع لكل خطوة dt/2 عندما W ≡ 0"""
        n = 200_000
        config = BBMConfig.forward(Potential.zero(), 1.0, 5.0, bridge=False)
        system = ParticleSystem.start(2.5, n)
        step(system, config, stream(2, 'bbm-branch'))
        births = system.size - n
        expected = n * config.dt / 2.0
        self.assertLess(abs(births - expected), 4.0 * math.sqrt(expected))

    def test_children_inherit_position_and_log(self):
        """اختبار أن الابن يولد في موقع أبيه ويُسجَّل في السجل"""
        config = BBMConfig(Potential.step(9.0), drift=0.0, L=math.inf, dt=1e-3)
        system = ParticleSystem.start(0.5, 5000)
        step(system, config, stream(3, 'bbm-children'))
        parents, births = system.log()
        children = np.flatnonzero(parents >= 0)
        self.assertGreater(children.size, 0)
        self.assertTrue(np.all(births[children] == system.time))
        lookup = {int(ident): row for row, ident in enumerate(system.ident)}
        for child in children[:20]:
            parent = int(parents[child])
            if parent in lookup:
                self.assertEqual(system.position[lookup[int(child)]], system.position[lookup[parent]])

    def test_no_branching_hook(self):
        """اختبار Z_t ∈ {0, 1} عند تعطيل التفرع"""
        config = BBMConfig.forward(Potential.step(3.0), 1.0, 5.0, branching=False)
        result = run(config, 1.0, 0.5, stream(4, 'bbm-nobranch'), n_replicates=200)
        self.assertTrue(np.all(result.series['Z'] <= 1))
        self.assertTrue(np.all(np.diff(result.series['Z'], axis=0) <= 0))


class ForwardRunTest(SimpleTestCase):
    """اختبارات المارتينغال الجمعي على [0, 5] مع W ≡ 0"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.zero(), 5.0)
        cls.pair = harmonic_pair(cls.sol)
        cls.config = BBMConfig.forward(Potential.zero(), cls.sol.mu, 5.0, bridge=True)
        cls.result = run(cls.config, 2.0, 1.0, stream(5, 'bbm-forward'),
                         observables={'W_additive': cls.pair.h_at}, n_replicates=3000, every=250)

    def test_sine_decay_rate(self):
        """اختبار w = π²/(2L²) للجهد الصفري"""
        self.assertAlmostEqual(self.sol.w, math.pi ** 2 / 50.0, delta=1e-8)

    def test_additive_martingale_mean(self):
        """اختبار E_x[Σh(X_v(t))]·e^{wt} = h(x) عند ثلاثة أزمنة"""
        target = float(self.pair.h_at(2.0))
        series = self.result.series['W_additive']
        for index in (1, 2, 4):
            t = self.result.times[index]
            samples = series[index] * math.exp(self.sol.w * t)
            mean = samples.mean()
            stderr = samples.std(ddof=1) / math.sqrt(samples.size)
            self.assertLess(abs(mean - target), 4.0 * stderr + 0.01 * target, msg=f't={t}')

    def test_frame_layout(self):
        """اختبار أعمدة الإطار الطويل"""
        frame = self.result.frame()
        for column in ('t', 'replicate', 'Z', 'absorbed0', 'absorbedL', 'W_additive'):
            self.assertIn(column, frame.columns)
        self.assertEqual(len(frame), self.result.times.size * 3000)

    def test_start_near_boundary_rarely_survives(self):
        """اختبار أن البداية قرب الصفر تعطي بقاءً ضئيلاً"""
        result = run(self.config, 0.01, 1.0, stream(6, 'bbm-edge'), n_replicates=500)
        self.assertLess(np.mean(result.final('Z') > 0), 0.05)

    def test_start_outside_domain_rejected(self):
        """اختبار رفض x0 خارج (0, L)"""
        with self.assertRaises(ConfigError):
            run(self.config, 5.0, 1.0, stream(0, 'bbm-bad'))

    def test_many_to_few_first_moment(self):
        """اختبار many-to-few عند k=1: h(x)e^{−wt}"""
        estimate = many_to_few_lhs(self.config, self.pair.h_at, 2.0, 1, 0.5, Constant(), 2000,
                                   stream(7, 'bbm-m2f'))
        target = float(self.pair.h_at(2.0)) * math.exp(-self.sol.w * 0.5)
        self.assertLess(abs(estimate.value - target), 4.0 * estimate.stderr + 0.01 * target)

    def test_many_to_few_tuple_size_guard(self):
        """اختبار رفض k > 4"""
        with self.assertRaises(ConfigError):
            many_to_few_lhs(self.config, self.pair.h_at, 2.0, 5, 0.5, Constant(), 10, stream(0, 'bbm-guard'))


class GenealogyTest(SimpleTestCase):
    """اختبارات مصفوفات الأنساب"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        config = BBMConfig(Potential.step(9.0), drift=0.0, L=math.inf, dt=1e-3)
        cls.system = run(config, 0.5, 0.8, stream(8, 'bbm-genealogy'), n_replicates=4).system

    def test_manual_two_leaf_distance(self):
        """اختبار d = t − زمن الانفصال على شجرة يدوية"""
        system = ParticleSystem.start(1.0, 1)
        system.time = 0.5
        system._append(np.array([0]), 0.5)
        system.time = 1.0
        D = distance_matrix(system, system.ident)
        self.assertAlmostEqual(D[0, 1], 0.5)
        self.assertEqual(D[0, 0], 0.0)

    def test_mmm_sample_is_planar(self):
        """اختبار أن المصفوفة المعاد ترتيبها فوق مترية مستوية"""
        sample_scale = 8.0
        for replicate in range(4):
            if self.system.members(replicate).size < 2:
                continue
            sample = mmm_sample(self.system, replicate, N=sample_scale, gamma=1.0)
            self.assertTrue(is_ultrametric(sample.matrix.entries))
            self.assertEqual(len(sample.marked.marks), sample.size)
            self.assertAlmostEqual(float(sample.weights.sum()), sample.size / sample_scale)

    def test_h_biased_weights(self):
        """اختبار أوزان h مقسومة على N^γ"""
        sample = mmm_sample(self.system, 0, weights='h', N=100.0, gamma=0.5, h=lambda x: np.ones_like(x))
        self.assertAlmostEqual(float(sample.weights.sum()), sample.size / 10.0)
        with self.assertRaises(ConfigError):
            mmm_sample(self.system, 0, weights='h')

    def test_uniform_weights_use_population_scale(self):
        """اختبار أن الكتلة الكلية Z/N^γ لا تعتمد على عدد الجسيمات في المقام"""
        sample = mmm_sample(self.system, 0, N=2.0, gamma=2.0)
        np.testing.assert_allclose(sample.weights, np.full(sample.size, 0.25))
        self.assertAlmostEqual(float(sample.weights.sum()), sample.size / 4.0)
        with self.assertRaises(ConfigError):
            mmm_sample(self.system, 0, N=0.0)

    def test_empty_replicate(self):
        """اختبار الخطأ عند انقراض التكرار"""
        system = ParticleSystem.start(1.0, 1)
        system._keep(np.array([False]))
        with self.assertRaises(BBMError):
            mmm_sample(system, 0)

    def test_pair_sum_matches_functional(self):
        """اختبار أن الدالة المنتجية (1,1) تساوي الثابت على الأزواج"""
        h = lambda x: 1.0 + x  # noqa: E731
        for replicate in range(2):
            by_constant = tuple_sum(self.system, replicate, h, 2, Constant())
            by_functional = tuple_sum(self.system, replicate, h, 2, ProductFunctional.uniform((1, 1)))
            self.assertAlmostEqual(by_constant, by_functional, places=8)

    def test_elementary_symmetric(self):
        """اختبار e_2(1,2,3) = 11"""
        self.assertAlmostEqual(elementary_symmetric(np.array([1.0, 2.0, 3.0]), 2), 11.0)
        self.assertEqual(elementary_symmetric(np.array([1.0]), 2), 0.0)


class CouplingTest(SimpleTestCase):
    """اختبارات الاقتران مع العملية على ℝ₊"""

    def test_inner_population_dominated(self):
        """اختبار Z^{[0,L]} ≤ Z^{ℝ₊} مسارياً"""
        config = BBMConfig.forward(Potential.step(3.0), 1.0, 2.0)
        result = coupled_runs(config, 1.5, 1.0, stream(9, 'bbm-coupling'), n_replicates=300)
        self.assertTrue(np.all(result.series['Z_inner'] <= result.series['Z']))
        self.assertTrue(np.any(result.series['Z_inner'] < result.series['Z']))

    def test_coupling_needs_bounded_domain(self):
        """اختبار رفض الاقتران على مجال غير محدود"""
        with self.assertRaises(ConfigError):
            coupled_runs(BBMConfig.reversed(1.0), 1.0, 1.0, stream(0, 'bbm-coupling'))


class ReversedProcessTest(SimpleTestCase):
    """اختبارات العملية المعكوسة"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.rq = semi_pushed_reversed()

    def test_h_vanishes_at_zero_and_is_bounded(self):
        """اختبار h←(0) = 0 و sup h← < ∞"""
        self.assertEqual(float(self.rq.h(0.0)), 0.0)
        self.assertTrue(math.isfinite(self.rq.h_sup()))
        self.assertLess(float(self.rq.h(200.0)), 1e-10)

    def test_martingale_mean(self):
        """اختبار E_z[W←_t] = h←(z)"""
        outcome = run_reversed(self.rq, 1.0, 1.0, stream(10, 'bbm-reversed'), n_replicates=2000, bridge=True)
        samples = outcome.W[-1]
        target = float(self.rq.h(1.0))
        stderr = samples.std(ddof=1) / math.sqrt(samples.size)
        self.assertLess(abs(samples.mean() - target), 4.0 * stderr + 0.01 * target)
        self.assertTrue(np.all(outcome.running_minimum[-1] <= outcome.running_minimum[0]))

    def test_reversed_start_must_be_positive(self):
        """اختبار رفض z0 ≤ 0"""
        with self.assertRaises(ConfigError):
            run_reversed(self.rq, 0.0, 1.0, stream(0, 'bbm-reversed'))

    def test_green_closed_form_matches_quadrature(self):
        """اختبار G← المغلقة مقابل التكامل العددي"""
        for z, y in ((1.0, 1.0), (0.5, 2.0), (3.0, 0.7)):
            closed = float(reversed_green(self.rq, z, y))
            numeric = reversed_green_quadrature(self.rq, z, y)
            self.assertAlmostEqual(closed, numeric, delta=1e-8 * max(1.0, abs(numeric)))

    def test_green_vanishes_near_zero(self):
        """اختبار G←(z, y) → 0 عندما y → 0"""
        self.assertLess(float(reversed_green(self.rq, 1.0, 1e-6)), 1e-9)

    def test_green_boundary_error(self):
        """اختبار الخطأ عند الحد z = 0"""
        with self.assertRaises(BoundarySingularityError):
            reversed_green(self.rq, 0.0, 1.0)
        with self.assertRaises(BoundarySingularityError):
            reversed_green_quadrature(self.rq, 1.0, 0.0)

    def test_escape_probability_decreases_with_length(self):
        """اختبار تناقص P(inf X ≤ 1 قبل ε) من (1−c)L مع L"""
        trend = reversed_escape(self.rq, [3.0, 5.0, 7.0], 0.5, 400, stream(14, 'bbm-escape'), delta1=0.9)
        p = trend.frame['probability'].to_numpy()
        self.assertTrue(trend.decreasing)
        self.assertGreater(p[0], p[2] + 0.1)
        self.assertAlmostEqual(trend.frame['epsilon'].iloc[0], 0.1 * 3.0 / self.rq.beta)
        self.assertEqual(trend.frame['z0'].tolist(), [1.5, 2.5, 3.5])

    def test_escape_start_fraction_guard(self):
        with self.assertRaises(ConfigError):
            reversed_escape(self.rq, [3.0, 5.0], 1.5, 10, stream(0, 'bbm-escape'))

    def test_lambda_estimator_first_moment(self):
        """اختبار M←^{1}_z[1] = 1 من جدول العزوم"""
        table = lambda_estimator(self.rq, [1.0], 1000, stream(11, 'bbm-lambda'), horizon=2.0,
                                 k_max=2, plateau_tol=10.0)
        first = table[table['k'] == 1].iloc[0]
        self.assertLess(abs(first['normalized'] - 1.0), 4.0 * first['normalized_stderr'] + 0.01)
        self.assertEqual(sorted(table['k'].unique().tolist()), [1, 2])

    def test_lambda_estimator_plateau_guard(self):
        """اختبار خطأ الأفق القصير"""
        with self.assertRaises(HorizonTooShortError):
            lambda_estimator(self.rq, [1.0], 200, stream(12, 'bbm-lambda'), horizon=1.0, plateau_tol=1e-9)


class AbsorbedMassTest(SimpleTestCase):
    """اختبارات حد الكتلة الممتصة"""

    def test_bound_holds(self):
        """اختبار P(بلوغ مستوى القطع) ≤ 2·h_∞(x)/(c̄AN^γ)"""
        limit = limit_solution(Potential.step(3.0))
        check = absorbed_mass_check(limit, 1.0, 10.0, 1.0, 1.0, 300, stream(13, 'bbm-absorbed'))
        self.assertTrue(check.holds)
        self.assertGreater(check.L, 1.0)
        self.assertAlmostEqual(float(limit.h_at(check.L)), check.level, delta=1e-6 * check.level)


class EquilibriumTest(SimpleTestCase):
    """اختبارات اقتراب مواقع الجسيمات من الكثافة ∝ h̃"""

    def test_ks_decreases_in_time(self):
        """اختبار تناقص إحصائية KS مع الزمن من بداية قرب L"""
        sol = solve_slp(Potential.zero(), 4.0)
        config = BBMConfig.forward(Potential.zero(), sol.mu, 4.0)
        frame = equilibrium_ks(config, harmonic_pair(sol), 3.5, [0.1, 1.0, 3.0], 1000, stream(15, 'bbm-ks'))
        ks = frame['ks'].to_numpy()
        self.assertTrue(np.all(frame['particles'] > 0))
        self.assertTrue(np.all(np.diff(ks) < 0), ks)
        self.assertEqual(frame['t'].tolist(), [0.1, 1.0, 3.0])


class BBMCommandTest(SimpleTestCase):
    """اختبارات أمر bbm"""

    def test_forward_csv_and_summary(self):
        """اختبار إخراج السلاسل الزمنية والملخص"""
        with tempfile.TemporaryDirectory() as folder:
            output = Path(folder) / 'series.csv'
            summary = Path(folder) / 'summary.json'
            call_command('bbm', '--L', '5', '--x0', '2', '--t', '0.1', '--replicates', '20',
                         '--output', str(output), '--summary', str(summary),
                         '--genealogy', str(Path(folder) / 'genealogy'), '--N', '20', stdout=StringIO())
            header = output.read_text(encoding='utf-8').splitlines()[0]
            self.assertTrue(header.startswith('t,replicate,Z,absorbed0,absorbedL'))
            self.assertIn('W_additive', header)
            self.assertIn('expected_W_additive', summary.read_text(encoding='utf-8'))
            data = json.loads(summary.read_text(encoding='utf-8'))
            self.assertGreater(data['genealogy_files'], 0)
            self.assertGreater(data['genealogy_mean_mass'], 0.0)

    def test_escape_table(self):
        """اختبار جدول احتمالات الاقتراب من الصفر"""
        with tempfile.TemporaryDirectory() as folder:
            summary = Path(folder) / 'summary.json'
            out = StringIO()
            call_command('bbm', '--potential', 'step:3', '--escape', '--lengths', '3', '5', '--delta1', '0.9',
                         '--replicates', '50', '--summary', str(summary), stdout=out)
            frame = pd.read_csv(StringIO(out.getvalue()))
            self.assertEqual(frame['L'].tolist(), [3.0, 5.0])
            data = json.loads(summary.read_text(encoding='utf-8'))
            self.assertEqual(data['mode'], 'escape')
            self.assertIn('decreasing', data)

    def test_equilibrium_table(self):
        """اختبار جدول KS عبر الأزمنة"""
        out = StringIO()
        call_command('bbm', '--L', '4', '--x0', '3.5', '--equilibrium', '--times', '0.1', '0.5',
                     '--replicates', '50', stdout=out, stderr=StringIO())
        frame = pd.read_csv(StringIO(out.getvalue()))
        self.assertEqual(list(frame.columns), ['t', 'particles', 'ks', 'pvalue'])
        self.assertEqual(len(frame), 2)
