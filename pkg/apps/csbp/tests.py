"""
اختبارات عمليات التفرع ذات الحالة المستمرة
BRLab - Branching Genealogy Laboratory
"""

import json
import math
from io import StringIO

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy import integrate

from apps.core.rng import stream
from apps.ultrametric.functionals import Constant, DepthIndicator, MarkPolynomial, ProductFunctional
from apps.ultrametric.services import PlanarUltrametricMatrix, tau, validate

from .exceptions import (
    CombinatorialBlowupError,
    DomainError,
    MomentError,
    NoExtinctionError,
    UnsupportedFunctionalError,
)
from .mechanisms import BranchingMechanism, bound_sequence_check, carleman_check, grey_check, psi_eval
from .moments import csbp_moments, pair_moment_check, sample_planar, unplanarize
from .reduced import (
    Forest,
    entrance_law_check,
    genealogy_at,
    offdiagonal_mass,
    probe_time,
    simulate_forest,
    simulate_reduced,
)
from .services import LaplaceFlow, ReducedRates, grey_ubar, laplace_exponent

STABLE = BranchingMechanism.stable(1.0, 1.5)
FELLER = BranchingMechanism.feller(1.0)
CUTOFF = BranchingMechanism.cutoff(2.0, 1.5)
CUTOFF_WITH_DIFFUSION = BranchingMechanism.cutoff(2.0, 1.5, d=1.0)


class MechanismTest(SimpleTestCase):
    """اختبارات آليات التفرع"""

    def test_stable_psi(self):
        """اختبار ψ(4) = 8 للآلية α-stable"""
        self.assertAlmostEqual(float(psi_eval(STABLE, 4.0)), 8.0, places=12)

    def test_linear_psi(self):
        """اختبار ψ(θ) = bθ"""
        self.assertAlmostEqual(float(psi_eval(BranchingMechanism.from_spec('linear:2'), 3.0)), 6.0)

    def test_cutoff_psi_against_quadrature(self):
        """اختبار ψ للآلية المقطوعة مقابل التكامل العددي المباشر"""
        A, alpha = 2.0, 1.5
        direct, _ = integrate.quad(lambda y: math.exp(-A * y) - 1.0 + A * y, 0.0, 1.0, epsabs=1e-14)
        self.assertAlmostEqual(float(psi_eval(CUTOFF, 1.0)), A ** (-alpha) * direct, places=12)
        small, _ = integrate.quad(lambda y: math.expm1(-1e-4 * A * y) + 1e-4 * A * y, 0.0, 1.0, epsabs=1e-20)
        self.assertAlmostEqual(float(psi_eval(CUTOFF, 1e-4)) / (A ** (-alpha) * small), 1.0, places=7)

    def test_negative_theta_rejected(self):
        """اختبار رفض θ سالبة"""
        with self.assertRaises(DomainError):
            psi_eval(FELLER, -1.0)

    def test_cutoff_moment_scaling(self):
        """اختبار m_{p,A} = A^{p−α}·m_{p,1}"""
        unit = BranchingMechanism.cutoff(1.0, 1.5)
        for p in range(2, 9):
            self.assertAlmostEqual(CUTOFF.moment_coefficient(p), 2.0 ** (p - 1.5) * unit.moment_coefficient(p), places=12)

    def test_stable_has_no_moments(self):
        """اختبار غياب العزوم للآلية α-stable"""
        with self.assertRaises(MomentError):
            STABLE.moment_coefficient(2)

    def test_from_spec(self):
        """اختبار تحليل الوصف النصي"""
        self.assertEqual(BranchingMechanism.from_spec('feller:1'), FELLER)
        self.assertEqual(BranchingMechanism.from_spec('stable:1:1.5'), STABLE)
        self.assertEqual(BranchingMechanism.from_spec('cutoff:2:1.5:1'), CUTOFF_WITH_DIFFUSION)

    def test_grey_condition(self):
        """اختبار شرط Grey"""
        self.assertTrue(grey_check(STABLE).holds)
        self.assertTrue(grey_check(FELLER).holds)
        self.assertFalse(grey_check(CUTOFF).holds)
        with self.assertRaises(NoExtinctionError):
            grey_ubar(LaplaceFlow(CUTOFF), 1.0)

    def test_sequence_bound(self):
        """اختبار الحد u_k ≤ u₁^k R^{k−1} 4^k"""
        for R in (1.0, 2.0, 5.0):
            for k, value, bound, ok in bound_sequence_check(R, 0.7, 12):
                self.assertTrue(ok, msg=f'R={R} k={k} u_k={value} bound={bound}')

    def test_carleman_proxy(self):
        """اختبار تناقص m_k^{1/k}/k للعائلة المقطوعة"""
        decreasing, values = carleman_check(CUTOFF)
        self.assertTrue(decreasing)
        self.assertEqual(sorted(values), list(range(4, 13)))


class LaplaceFlowTest(SimpleTestCase):
    """اختبارات تدفق أس لابلاس"""

    def test_stable_closed_form(self):
        """اختبار u₁(1) = (1 + 0.5)^{−2}"""
        flow = LaplaceFlow(STABLE)
        self.assertAlmostEqual(laplace_exponent(flow, 1.0, 1.0), 1.5 ** -2, delta=1e-6)

    def test_stable_ubar(self):
        """اختبار ū₁ = 4"""
        self.assertAlmostEqual(grey_ubar(LaplaceFlow(STABLE), 1.0), 4.0, delta=1e-5)

    def test_feller_ubar(self):
        """اختبار ū_t = 2/t لآلية Feller"""
        flow = LaplaceFlow(FELLER)
        for t in (0.25, 1.0, 3.0):
            self.assertAlmostEqual(flow.ubar(t) * t / 2.0, 1.0, delta=1e-7)

    def test_linear_flow(self):
        """اختبار u₁(2) = 2e^{−1} لـ ψ(θ) = θ"""
        flow = LaplaceFlow(BranchingMechanism.from_spec('linear:1'))
        self.assertAlmostEqual(flow.u(2.0, 1.0), 2.0 * math.exp(-1.0), delta=1e-8)

    def test_semigroup(self):
        """اختبار u_{t+s}(θ) = u_t(u_s(θ))"""
        flow = LaplaceFlow(STABLE)
        for theta, s, t in ((1.0, 0.3, 0.5), (10.0, 0.1, 1.2), (0.2, 2.0, 0.7)):
            self.assertAlmostEqual(flow.u(flow.u(theta, s), t) / flow.u(theta, s + t), 1.0, delta=1e-7)

    def test_zero_theta(self):
        """اختبار u_t(0) = 0"""
        self.assertEqual(LaplaceFlow(FELLER).u(0.0, 1.0), 0.0)


class ReducedRatesTest(SimpleTestCase):
    """اختبارات معدلات العملية المختزلة"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.stable = ReducedRates(LaplaceFlow(STABLE), 1.0)
        cls.feller = ReducedRates(LaplaceFlow(FELLER), 1.0)
        cls.cutoff = ReducedRates(LaplaceFlow(CUTOFF_WITH_DIFFUSION), 1.0)

    def test_stable_rates(self):
        """اختبار m = 2 و r = 1 للآلية α-stable عند τ = 1"""
        self.assertAlmostEqual(float(self.stable.m(1.0)), 2.0, delta=1e-4)
        self.assertAlmostEqual(float(self.stable.total_rate(1.0)), 1.0, delta=1e-4)

    def test_feller_factorial_rate(self):
        """اختبار r_τE[K^{(2)}] = 2/τ لآلية Feller"""
        for tau_ in (0.25, 0.5, 1.0):
            self.assertAlmostEqual(float(self.feller.factorial_moment_rate(2, tau_)) * tau_ / 2.0, 1.0, delta=1e-5)

    def test_compensation_identity(self):
        """اختبار e^{−∫m} = (ū_t/ū_{t−s})e^{sb}"""
        self.assertAlmostEqual(self.feller.compensation(0.5), 0.5, delta=1e-5)
        rng = np.random.default_rng(7)
        for s in rng.uniform(0.05, 0.9, size=5):
            self.assertAlmostEqual(
                self.cutoff.compensation(s) / self.cutoff.compensation_closed_form(s), 1.0, delta=1e-5,
            )

    def test_exact_offspring_law(self):
        """اختبار العزوم العاملية للقانون الدقيق"""
        for tau_ in (0.2, 1.0):
            law = self.cutoff.offspring_law(tau_)
            rate = float(self.cutoff.total_rate(tau_))
            self.assertLess(law.tail, 1e-8)
            for k in (2, 3):
                expected = float(self.cutoff.factorial_moment_rate(k, tau_))
                self.assertAlmostEqual(rate * law.factorial_moment(k) / expected, 1.0, delta=1e-6)

    def test_sampled_offspring_moments(self):
        """اختبار العزم العاملي الثاني لعينات K_τ"""
        rng = stream(11, 'offspring')
        ks = self.cutoff.sample_offspring(np.full(20000, 1.0), rng).astype(float)
        falling = ks * (ks - 1.0)
        expected = self.cutoff.offspring_law(1.0).factorial_moment(2)
        stderr = falling.std(ddof=1) / math.sqrt(falling.size)
        self.assertLess(abs(falling.mean() - expected), 4.0 * stderr)

    def test_stable_binary_fraction(self):
        """اختبار P(K = 2) = α/2 للآلية α-stable"""
        rng = stream(12, 'offspring')
        ks = self.stable.sample_offspring(np.full(20000, 0.5), rng)
        share = float(np.mean(ks == 2))
        self.assertLess(abs(share - 0.75), 4.0 * math.sqrt(0.75 * 0.25 / ks.size))
        self.assertTrue(np.all(ks >= 2))

    def test_feller_is_binary(self):
        """اختبار أن تفرعات Feller ثنائية"""
        ks = self.feller.sample_offspring(np.linspace(0.1, 1.0, 50), stream(1, 'binary'))
        self.assertTrue(np.all(ks == 2))


class ReducedProcessTest(SimpleTestCase):
    """اختبارات محاكاة العملية المختزلة"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.flow = LaplaceFlow(FELLER)
        cls.rates = ReducedRates(cls.flow, 1.0)
        cls.forest = simulate_forest(cls.rates, 4000, stream(3, 'forest'))

    def test_single_root(self):
        """اختبار Z_{0,t} = 1"""
        self.assertTrue(np.all(self.forest.population(0.0) == 1))

    def test_population_mean(self):
        """اختبار E[Z_{0.5,1}] = ū_{0.5}/ū_1 = 2"""
        Z = self.forest.population(0.5).astype(float)
        stderr = Z.std(ddof=1) / math.sqrt(Z.size)
        self.assertLess(abs(Z.mean() - 2.0), 4.0 * stderr)

    def test_martingale_mean(self):
        """اختبار E[W_{s,t}] = 1"""
        for s in (0.25, 0.75):
            W = self.forest.martingale(s)
            stderr = W.std(ddof=1) / math.sqrt(W.size)
            self.assertLess(abs(W.mean() - 1.0), 4.0 * stderr)

    def test_tree_view_labels(self):
        """اختبار عناوين Ulam–Harris وأزمنة الولادة"""
        tree = simulate_reduced(self.rates, 1.0, stream(4, 'view'))
        root = tree.nodes[()]
        self.assertEqual(root.sigma, 0.0)
        for label, node in tree.nodes.items():
            for i in range(node.K):
                child = tree.nodes[label + (i,)]
                self.assertAlmostEqual(child.sigma, node.sigma + node.omega, places=12)
            self.assertNotIn(label + (node.K,), tree.nodes)

    def test_genealogy_validates_and_is_additive(self):
        """اختبار صلاحية مصفوفة الأنساب وجمعية الأوزان"""
        W = self.forest.martingale(self.forest.until)
        for tree in range(40):
            genealogy = genealogy_at(self.forest, 0.6, tree=tree)
            self.assertIsInstance(genealogy.matrix, PlanarUltrametricMatrix)
            validate(genealogy.matrix)
            self.assertLessEqual(tau(genealogy.matrix), 0.6)
            self.assertAlmostEqual(genealogy.total_weight, W[tree], places=10)
            self.assertEqual(list(genealogy.labels), sorted(genealogy.labels))

    def test_two_leaf_genealogy(self):
        """اختبار d = s − a لورقتين من نفس الأب"""
        forest = Forest(
            rates=self.rates, n=1, t=1.0, until=probe_time(1.0),
            tree=np.zeros(3, dtype=np.int64),
            parent=np.array([-1, 0, 0]),
            birth=np.array([0.0, 0.3, 0.3]),
            death=np.array([0.3, 0.99, 0.995]),
            K=np.array([2, 0, 0]),
            rank=np.array([0, 0, 1]),
        )
        genealogy = genealogy_at(forest, 0.5)
        self.assertAlmostEqual(genealogy.matrix[0, 1], 0.2, places=12)
        self.assertEqual(genealogy.labels, ((0,), (1,)))
        np.testing.assert_allclose(genealogy.weights, forest.compensation(forest.until))
        self.assertAlmostEqual(
            float(offdiagonal_mass(forest)[0]), 2.0 * forest.compensation(forest.until) ** 2, places=12,
        )

    def test_entrance_law(self):
        """اختبار قانون الدخول لآلية Feller عند θ = 1"""
        check = entrance_law_check(FELLER, 1.0, 1.0, 4000, stream(5, 'entrance'), flow=self.flow, rates=self.rates)
        self.assertAlmostEqual(check.rhs, 0.5, delta=1e-6)
        self.assertLess(abs(check.probe_z), 4.0)
        self.assertLess(abs(check.conditional_z), 4.0)
        self.assertLess(abs(check.rhs - check.probe_rhs), 0.01)

    def test_entrance_probe_target_closed_form(self):
        """اختبار القيمة الدقيقة عند زمن المسبار لآلية Feller: u_s(λ) = λ/(1 + λs/2)"""
        check = entrance_law_check(FELLER, 1.0, 1.0, 10, stream(5, 'entrance'), flow=self.flow, rates=self.rates)
        s = probe_time(1.0)
        c = (2.0 / 1.0) / (2.0 / (1.0 - s))
        lam = -math.expm1(-c) * 2.0 / (1.0 - s)
        self.assertAlmostEqual(check.probe_rhs, 1.0 - lam / (1.0 + lam * s / 2.0) / 2.0, delta=1e-5)

    def test_entrance_lhs_is_simulated(self):
        """اختبار أن الطرف الأيسر متوسط e^{−θW} محاكى وليس الصيغة المغلقة"""
        check = entrance_law_check(FELLER, 1.0, 1.0, 2000, stream(7, 'entrance'), flow=self.flow, rates=self.rates,
                                   probe=1.0 - 1.0 / 256.0)
        self.assertGreater(check.lhs.stderr, 1e-3)
        self.assertNotAlmostEqual(check.lhs.value, check.conditional.value, places=6)
        self.assertLess(abs(check.probe_z), 4.0)

    def test_entrance_law_at_zero(self):
        """اختبار θ = 0"""
        check = entrance_law_check(FELLER, 1.0, 0.0, 10, stream(5, 'entrance'))
        self.assertEqual(check.lhs.value, 1.0)
        self.assertEqual(check.rhs, 1.0)

    def test_entrance_rhs_decreasing(self):
        """اختبار تناقص الطرف الأيمن في θ"""
        values = [entrance_law_check(FELLER, 1.0, th, 50, stream(6, 'entrance'), flow=self.flow, rates=self.rates).rhs
                  for th in (0.5, 1.0, 2.0, 8.0)]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))


class MomentTest(SimpleTestCase):
    """اختبارات قياسات العزوم المستوية"""

    def test_first_moment(self):
        """اختبار M̂^{1,t}[1] = e^{−bt}"""
        self.assertAlmostEqual(csbp_moments(FELLER, 1, 1.0, Constant()), 1.0, places=12)
        drifted = BranchingMechanism.feller(1.0, b=0.5)
        self.assertAlmostEqual(csbp_moments(drifted, 1, 2.0, Constant()), math.exp(-1.0), places=12)

    def test_feller_pair_moment(self):
        """اختبار M̂^{2,1}[1] = 0.5 لآلية Feller"""
        self.assertAlmostEqual(csbp_moments(FELLER, 2, 1.0, Constant()), 0.5, places=9)

    def test_cutoff_pair_moment(self):
        """اختبار M̂^{2,1}[1] = 2^{0.5}/6 للآلية المقطوعة"""
        self.assertAlmostEqual(csbp_moments(CUTOFF, 2, 1.0, Constant()), math.sqrt(2.0) / 6.0, places=9)

    def test_feller_triple_moment(self):
        """اختبار M̂^{3,t}[1] = t²/4 لآلية Feller"""
        self.assertAlmostEqual(csbp_moments(FELLER, 3, 1.0, Constant()), 0.25, places=8)

    def test_depth_indicator(self):
        """اختبار دالة العمق المؤشرية"""
        G = ProductFunctional.uniform((1, 1), DepthIndicator(0.25))
        self.assertAlmostEqual(csbp_moments(FELLER, 2, 1.0, G), 0.375, places=9)

    def test_monotone_in_t(self):
        """اختبار تزايد العزوم في t"""
        values = [csbp_moments(CUTOFF, 3, t, Constant()) for t in (0.5, 1.0, 1.5, 2.0)]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))

    def test_unsupported_functionals(self):
        """اختبار رفض ε > 0 ودوال العلامات والآلية α-stable"""
        with self.assertRaises(UnsupportedFunctionalError):
            csbp_moments(FELLER, 2, 1.0, ProductFunctional.uniform((1, 1), epsilon=0.1))
        marked = ProductFunctional((1, 1), DepthIndicator(0.0), (MarkPolynomial((0.0, 1.0)), Constant()))
        with self.assertRaises(UnsupportedFunctionalError):
            csbp_moments(FELLER, 2, 1.0, marked)
        with self.assertRaises(MomentError):
            csbp_moments(STABLE, 2, 1.0, Constant())

    def test_unplanarize_small_k(self):
        """اختبار إزالة الاستواء لـ k = 1, 2"""
        flow = LaplaceFlow(FELLER)
        self.assertAlmostEqual(unplanarize(FELLER, 1, 1.0, Constant(), flow=flow).value, 0.5, places=6)
        self.assertAlmostEqual(unplanarize(FELLER, 2, 1.0, Constant(), flow=flow).value, 0.5, places=6)
        shallow = unplanarize(FELLER, 2, 1.0, lambda U: float(U[0, 1] < 0.5), flow=flow)
        self.assertAlmostEqual(shallow.value, 0.25, places=6)

    def test_unplanarize_three_leaves(self):
        """اختبار إزالة الاستواء لـ k = 3"""
        flow = LaplaceFlow(FELLER)
        self.assertAlmostEqual(unplanarize(FELLER, 3, 1.0, Constant(), flow=flow).value, 0.75, places=6)
        mc = unplanarize(FELLER, 3, 1.0, lambda U: 1.0, n=50, rng=stream(8, 'unplanar'), flow=flow)
        self.assertAlmostEqual(mc.value, 0.75, places=6)

    def test_unplanarize_guard(self):
        """اختبار حد k ≤ 8"""
        with self.assertRaises(CombinatorialBlowupError):
            unplanarize(FELLER, 9, 1.0, Constant())

    def test_sample_planar(self):
        """اختبار صلاحية العينات المستوية"""
        for U in sample_planar(CUTOFF, 5, 1.0, 100, stream(9, 'planar')):
            validate(U)
            self.assertEqual(U.shape, (5, 5))
            self.assertLessEqual(tau(U), 1.0)

    def test_pair_moment_oracle(self):
        """اختبار عزم الأزواج مقابل مونت كارلو"""
        check = pair_moment_check(FELLER, 1.0, 3000, stream(10, 'pairs'))
        self.assertAlmostEqual(check.truncated, 0.5 * (1.0 - 1.0 / 64.0), places=6)
        self.assertAlmostEqual(check.full, 0.5, places=6)
        self.assertLess(abs(check.z), 4.0)


class CsbpCommandTest(SimpleTestCase):
    """اختبارات أمر csbp"""

    def test_moments_json(self):
        """اختبار إخراج JSON للعزوم"""
        out = StringIO()
        call_command('csbp', 'moments', '--mechanism', 'feller:1', '--k', '2', '--t', '1', stdout=out)
        self.assertAlmostEqual(json.loads(out.getvalue())['value'], 0.5, places=8)

    def test_simulate_csv(self):
        """اختبار إخراج CSV للمحاكاة"""
        out = StringIO()
        call_command('csbp', 'simulate', '--mechanism', 'feller:1', '--n', '20', '--s', '0.25', '0.5', stdout=out)
        lines = out.getvalue().strip().splitlines()
        self.assertEqual(lines[0], 'tree,s,Z,W')
        self.assertEqual(len(lines), 41)

    def test_entrance_check_csv(self):
        """اختبار أعمدة فحص قانون الدخول"""
        out = StringIO()
        call_command('csbp', 'entrance-check', '--mechanism', 'feller:1', '--n', '50', '--theta', '1', stdout=out)
        lines = out.getvalue().strip().splitlines()
        self.assertEqual(len(lines), 2)
        for column in ('lhs', 'probe_rhs', 'conditional', 'rhs'):
            self.assertIn(column, lines[0].split(','))
