"""
اختبارات التطبيق الطيفي
BRLab - Branching Genealogy Laboratory
"""

import math

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from io import StringIO
from scipy import integrate

from .exceptions import PotentialError, RegimeError, ResolutionError, SingularArgumentError, SpectralError
from .potentials import Potential
from .services import (
    Regime,
    classify_regime,
    criticality,
    cutoff_geometry,
    fundamental_solutions,
    gap_scaling,
    green_function,
    harmonic_pair,
    limit_eigenvalue,
    limit_solution,
    residual_check,
    reversed_quantities,
    sample_pi,
    scale_for_length,
    solve_slp,
    verify_v1_tail,
)


class PotentialTest(SimpleTestCase):
    """اختبارات الجهود"""

    def test_step_values_and_rate(self):
        """اختبار قيم الجهد الدرجي ومعدل التفرع"""
        W = Potential.step(4.0)
        self.assertEqual(float(W(0.5)), 4.0)
        self.assertEqual(float(W(1.5)), 0.0)
        self.assertAlmostEqual(float(W.rate(0.5)), 2.5)
        self.assertAlmostEqual(float(W.rate(3.0)), 0.5)
        self.assertEqual(W.support_edge, 1.0)

    def test_negative_potential_rejected(self):
        """اختبار رفض الجهد السالب"""
        with self.assertRaises(PotentialError):
            Potential.step(-1.0)
        with self.assertRaises(PotentialError):
            Potential.tabulated([0.0, 0.5, 1.0], [1.0, -0.1, 0.0])

    def test_support_outside_unit_interval_rejected(self):
        """اختبار رفض جهد محمول خارج [0,1]"""
        with self.assertRaises(PotentialError):
            Potential.tabulated([0.0, 1.5], [1.0, 0.0])

    def test_from_spec(self):
        """اختبار تحليل الوصف النصي"""
        self.assertEqual(Potential.from_spec('step:3'), Potential.step(3.0))
        self.assertEqual(Potential.from_spec('zero'), Potential.zero())
        self.assertEqual(Potential.from_spec('step:3:0.5').edge, 0.5)
        with self.assertRaises(PotentialError):
            Potential.from_spec('gaussian:1')


class ZeroPotentialTest(SimpleTestCase):
    """اختبارات الحل المغلق عند W ≡ 0"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.zero(), 10.0)

    def test_eigenvalue_closed_form(self):
        """اختبار λ₁ = −π²/(2L²)"""
        self.assertAlmostEqual(self.sol.lambda1, -math.pi ** 2 / 200.0, delta=1e-10)

    def test_eigenfunction_ratio(self):
        """اختبار v₁(5)/v₁(2.5) = √2"""
        ratio = float(self.sol.v1_at(5.0) / self.sol.v1_at(2.5))
        self.assertAlmostEqual(ratio, math.sqrt(2.0), places=9)

    def test_normalisation_at_one(self):
        """اختبار التطبيع v₁(1) = 1"""
        self.assertAlmostEqual(float(self.sol.v1_at(1.0)), 1.0, places=12)

    def test_pulled_regime(self):
        """اختبار أن الجهد المعدوم في النظام pulled"""
        self.assertEqual(self.sol.regime, Regime.PULLED)
        self.assertEqual(self.sol.lambda1_inf, 0.0)

    def test_tail_check_requires_positive_eigenvalue(self):
        """اختبار رفض فحص الذيل عند λ₁ ≤ 0"""
        with self.assertRaises(RegimeError):
            verify_v1_tail(self.sol)


class StepPotentialTest(SimpleTestCase):
    """اختبارات الجهد الدرجي"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pushed = solve_slp(Potential.step(4.0), 20.0)
        cls.semi = solve_slp(Potential.step(3.0), 20.0)

    def test_sinh_tail(self):
        """اختبار ذيل v₁ بصيغة sinh"""
        self.assertGreater(self.pushed.lambda1, 0.0)
        self.assertLess(verify_v1_tail(self.pushed), 1e-6)

    def test_equation_residual(self):
        """اختبار باقي المعادلة التفاضلية"""
        self.assertLess(residual_check(self.pushed), 1e-7)
        self.assertLess(residual_check(self.semi), 1e-7)

    def test_positivity(self):
        """اختبار موجبية الدالة الذاتية داخل المجال"""
        self.assertTrue(np.all(self.semi.v1[1:-1] > 0))
        self.assertEqual(self.semi.v1[0], 0.0)
        self.assertEqual(self.semi.v1[-1], 0.0)

    def test_regimes(self):
        """اختبار تصنيف الأنظمة"""
        self.assertEqual(self.semi.regime, Regime.SEMI_PUSHED)
        self.assertEqual(self.pushed.regime, Regime.PUSHED)
        self.assertTrue(1.0 < self.semi.alpha < 2.0)
        self.assertGreater(self.semi.mu, 3.0 * self.semi.beta)

    def test_limit_eigenvalue(self):
        """اختبار λ₁,∞ للجهد B=3 ونطاق α"""
        lam = limit_eigenvalue(Potential.step(3.0))
        self.assertTrue(0.025 < lam < 0.035)
        _, _, alpha = criticality(lam)
        self.assertAlmostEqual(alpha, 1.62, delta=0.02)
        self.assertGreater(self.semi.w, 0.0)

    def test_regime_boundary(self):
        """اختبار حد النظام عند λ = 1/16"""
        self.assertEqual(classify_regime(0.06), Regime.SEMI_PUSHED)
        self.assertEqual(classify_regime(0.07), Regime.PUSHED)
        self.assertEqual(classify_regime(0.0), Regime.PULLED)

    def test_harmonic_pair(self):
        """اختبار ⟨h̃,h⟩ = 1 و ∫Π = 1"""
        pair = harmonic_pair(self.semi)
        self.assertAlmostEqual(pair.inner_product(), 1.0, places=10)
        self.assertAlmostEqual(float(integrate.simpson(pair.pi, x=pair.x)), 1.0, places=10)
        self.assertAlmostEqual(float(integrate.simpson(pair.h_tilde, x=pair.x)), 1.0, places=10)

    def test_pi_sampling(self):
        """اختبار عينات Π ضمن المجال"""
        samples = sample_pi(self.semi, 2000, np.random.default_rng(3))
        self.assertTrue(np.all((samples >= 0) & (samples <= self.semi.L)))
        mean = float(integrate.simpson(self.semi.x * self.semi.v1 ** 2, x=self.semi.x) / self.semi.v1_norm2)
        self.assertAlmostEqual(float(samples.mean()), mean, delta=0.2)

    def test_tabulated_matches_step(self):
        """اختبار تطابق الجهد المجدول الثابت مع الجهد الدرجي"""
        xs = np.linspace(0.0, 1.0, 11)
        tab = solve_slp(Potential.tabulated(xs, np.full(11, 3.0)), 20.0)
        self.assertAlmostEqual(tab.lambda1, self.semi.lambda1, delta=1e-7)

    def test_resolution_error(self):
        """اختبار رفض شبكة أخشن من العتبة"""
        with self.assertRaises(ResolutionError):
            solve_slp(Potential.step(3.0, edge=0.001), 20.0)

    def test_domain_length(self):
        """اختبار رفض L ≤ 1"""
        with self.assertRaises(SpectralError):
            solve_slp(Potential.step(3.0), 1.0)


class GapScalingTest(SimpleTestCase):
    """اختبارات سرعة تقارب القيمة الذاتية"""

    def test_slope_matches_minus_two_beta(self):
        """اختبار ميل log w مقابل L"""
        result = gap_scaling(Potential.step(4.0), [6.0, 8.0, 10.0, 12.0])
        self.assertLess(result.relative_error, 0.02)
        self.assertTrue(all(a > b for a, b in zip(result.gaps, result.gaps[1:])))
        self.assertAlmostEqual(result.doubling_estimate, result.lambda1_inf, delta=1e-9)

    def test_pulled_rejected(self):
        """اختبار رفض الجهد المعدوم"""
        with self.assertRaises(RegimeError):
            gap_scaling(Potential.zero(), [6.0, 8.0, 10.0, 12.0])


class GreenFunctionTest(SimpleTestCase):
    """اختبارات دالة Green للعمود الفقري"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sol = solve_slp(Potential.step(3.0), 10.0)
        cls.xi = 1e-3
        cls.fs = fundamental_solutions(cls.sol, cls.xi)

    def test_vanishes_at_right_boundary(self):
        """اختبار G(x, L) = 0"""
        self.assertEqual(float(self.fs.green(3.0, self.sol.L)), 0.0)

    def test_total_mass(self):
        """اختبار ∫G_ξ(x,y)dy = 1/ξ"""
        x = float(self.sol.x[1024])
        values = self.fs.green(x, self.sol.x)
        mass = float(integrate.simpson(values, x=self.sol.x))
        self.assertAlmostEqual(mass * self.xi, 1.0, delta=1e-4)

    def test_reversibility(self):
        """اختبار v₁(x)²G(x,y) = v₁(y)²G(y,x)"""
        x, y = 2.0, 6.5
        lhs = float(self.sol.v1_at(x) ** 2 * green_function(self.sol, self.xi, x, y, self.fs))
        rhs = float(self.sol.v1_at(y) ** 2 * green_function(self.sol, self.xi, y, x, self.fs))
        self.assertAlmostEqual(lhs / rhs, 1.0, places=8)

    def test_wronskian_asymptotics(self):
        """اختبار ω/(2ξ‖v₁‖²) → 1"""
        xi = 1e-6
        fs = fundamental_solutions(self.sol, xi)
        self.assertAlmostEqual(fs.wronskian / (2.0 * xi * self.sol.v1_norm2), 1.0, delta=1e-3)

    def test_positive_inside(self):
        """اختبار موجبية G داخل المجال"""
        ys = np.linspace(0.1, 9.9, 50)
        self.assertTrue(np.all(self.fs.green(5.0, ys) > 0))

    def test_singular_argument(self):
        """اختبار رفض x = 0 و x = L"""
        with self.assertRaises(SingularArgumentError):
            self.fs.green(0.0, 1.0)
        with self.assertRaises(SingularArgumentError):
            self.fs.green(self.sol.L, 1.0)

    def test_invalid_xi(self):
        """اختبار رفض ξ ≤ 0"""
        with self.assertRaises(SpectralError):
            fundamental_solutions(self.sol, 0.0)


class ReversedQuantitiesTest(SimpleTestCase):
    """اختبارات الكميات المعكوسة وهندسة القطع"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.W = Potential.step(3.0)
        cls.rev = reversed_quantities(cls.W)

    def test_stable_h_matches_definition(self):
        """اختبار الصيغة المستقرة لـ h←"""
        z = np.array([0.5, 2.0, 7.0])
        direct = self.rev.v1(z) * np.exp(-self.rev.mu * z) / (self.rev.c_inf * self.rev.v_norm2)
        np.testing.assert_allclose(self.rev.h(z), direct, rtol=1e-12)
        np.testing.assert_allclose(self.rev.h(z) * self.rev.h_tilde(z), self.rev.pi(z), rtol=1e-12)

    def test_drift_near_zero(self):
        """اختبار β·coth(βz) ≈ 1/z"""
        self.assertAlmostEqual(float(self.rev.drift(1e-6)) * 1e-6, 1.0, places=6)

    def test_green_closed_form(self):
        """اختبار الصيغة المستقرة لـ G←"""
        b = self.rev.beta
        for z, y in [(1.0, 3.0), (4.0, 2.0), (2.5, 2.5)]:
            m = max(z, y)
            expected = math.sinh(b * y) ** 2 * (1.0 / math.tanh(b * m) - 1.0) / b
            self.assertAlmostEqual(float(self.rev.green(z, y)) / expected, 1.0, places=10)

    def test_forward_h_converges_to_reversed(self):
        """اختبار h(L−z)e^{−(μ−β)L} → h←(z)"""
        sol = solve_slp(self.W, 30.0)
        pair = harmonic_pair(sol)
        z = 2.0
        forward = float(pair.h_at(sol.L - z)) * math.exp(-(sol.mu - sol.beta) * sol.L)
        self.assertAlmostEqual(forward / float(self.rev.h(z)), 1.0, delta=1e-4)
        limit = limit_solution(self.W)
        self.assertAlmostEqual(sol.cL / limit.c_inf, 1.0, delta=1e-5)
        self.assertAlmostEqual(sol.v1_norm2 / limit.v_norm2, 1.0, delta=1e-5)

    def test_pulled_has_no_reversed_quantities(self):
        """اختبار رفض β = 0"""
        with self.assertRaises(RegimeError):
            reversed_quantities(Potential.zero())

    def test_cutoff_geometry(self):
        """اختبار هندسة القطع وعلاقة ε"""
        mu, beta = self.rev.mu, self.rev.beta
        geo = cutoff_geometry(mu, beta, N=1e6, A=10.0)
        self.assertGreater(geo.delta2, 0.0)
        self.assertAlmostEqual(geo.epsilon, 2.0 * (1.0 + geo.delta2) / (mu - beta) * geo.L_NA, places=9)
        self.assertAlmostEqual(geo.gamma, 1.0 / (self.rev.alpha - 1.0))
        self.assertAlmostEqual(scale_for_length(mu, beta, geo.L_NA, 10.0), 1e6, delta=1e-3)

    def test_cutoff_rejects_pushed(self):
        """اختبار رفض هندسة القطع في النظام pushed"""
        lam = limit_eigenvalue(Potential.step(4.0))
        mu, beta, _ = criticality(lam)
        with self.assertRaises(RegimeError):
            cutoff_geometry(mu, beta, N=1e6, A=10.0)


class SpectralCommandTest(SimpleTestCase):
    """اختبارات أمر الإدارة"""

    def test_json_output(self):
        """اختبار إخراج JSON"""
        out = StringIO()
        call_command('spectral', '--potential', 'step:3', '--L', '12', '--json', stdout=out)
        self.assertIn('"regime": "semi-pushed"', out.getvalue())
