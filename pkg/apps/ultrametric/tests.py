"""
اختبارات المصفوفات فوق المترية المستوية
BRLab - Branching Genealogy Laboratory
"""

import itertools
import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from .exceptions import (
    AsymmetryError,
    FunctionalSpecError,
    NestingError,
    NonZeroDiagonalError,
    PlanarityViolationError,
    UltrametricError,
)
from .functionals import (
    Constant,
    ConstantDepth,
    DepthIndicator,
    DepthPolynomial,
    MarkPolynomial,
    ProductFunctional,
    dump_functional,
    eval_functional,
    load_functional,
)
from .services import (
    MarkedMatrix,
    compositions,
    decompose_at,
    from_depths,
    is_ultrametric,
    permute,
    planar_order,
    read_matrix_csv,
    reconstruct,
    tau,
    validate,
    write_matrix_csv,
)

FIGURE_DEPTHS = (4.0, 1.0, 3.9, 2.0, 1.5, 3.95, 0.5, 3.8)


class ValidateTest(SimpleTestCase):
    """اختبارات التحقق من المصفوفة"""

    def test_valid_matrices(self):
        """اختبار قبول مصفوفات صالحة"""
        self.assertEqual(validate([[0, 3], [3, 0]]).k, 2)
        self.assertEqual(validate([[0, 1, 2], [1, 0, 2], [2, 2, 0]]).k, 3)

    def test_planarity_violation(self):
        """اختبار رفض انتهاك الخاصية المستوية"""
        with self.assertRaises(PlanarityViolationError) as ctx:
            validate([[0, 1, 2], [1, 0, 3], [2, 3, 0]])
        self.assertEqual(ctx.exception.triple, (0, 1, 2))

    def test_distinct_errors(self):
        """اختبار أن أخطاء التناظر والقطر مختلفة"""
        with self.assertRaises(AsymmetryError):
            validate([[0, 1], [2, 0]])
        with self.assertRaises(NonZeroDiagonalError):
            validate([[1, 1], [1, 0]])
        with self.assertRaises(ValueError):
            validate([[0, -1], [-1, 0]])

    def test_immutable(self):
        """اختبار أن المصفوفة غير قابلة للتعديل"""
        U = validate([[0, 3], [3, 0]])
        with self.assertRaises(ValueError):
            U.entries[0, 1] = 1.0

    def test_general_ultrametric(self):
        """اختبار الخاصية فوق المترية غير المستوية"""
        U = from_depths([1.0, 2.0])
        shuffled = permute(U, [1, 2, 0])
        self.assertTrue(is_ultrametric(shuffled))
        self.assertFalse(is_ultrametric([[0, 1, 3], [1, 0, 1], [3, 1, 0]]))


class DepthAndDecompositionTest(SimpleTestCase):
    """اختبارات العمق والتفكيك"""

    def setUp(self):
        """إعداد بيانات الاختبار"""
        self.U = validate([[0, 1, 2], [1, 0, 2], [2, 2, 0]])

    def test_tau(self):
        """اختبار τ(U)"""
        self.assertEqual(tau(validate([[0, 3], [3, 0]])), 3.0)
        self.assertEqual(tau(validate([[0]])), 0.0)
        self.assertEqual(tau(self.U), 2.0)

    def test_decompose_middle_level(self):
        """اختبار التفكيك عند s = 1.5"""
        result = decompose_at(self.U, 1.5)
        self.assertEqual(result.composition, (2, 1))
        self.assertEqual(result.submatrices[0].tolist(), [[0.0, 1.0], [1.0, 0.0]])
        self.assertEqual(result.submatrices[1].tolist(), [[0.0]])
        self.assertEqual(result.blocks, ((0, 1), (2,)))

    def test_decompose_at_zero(self):
        """اختبار s = 0 يعطي أجزاء مفردة"""
        self.assertEqual(decompose_at(self.U, 0.0).composition, (1, 1, 1))

    def test_decompose_above_tau(self):
        """اختبار s > τ يعطي كتلة واحدة"""
        self.assertEqual(decompose_at(self.U, 5.0).composition, (3,))

    def test_figure_style_multifurcation(self):
        """اختبار تجمع أربع نقاط تفرع في تفرع واحد عند τ − ε"""
        U = from_depths(FIGURE_DEPTHS)
        result = decompose_at(U, tau(U) - 0.5)
        self.assertEqual(result.composition, (1, 2, 3, 2, 1))
        for block, part in zip(result.blocks, result.composition):
            self.assertEqual(list(block), list(range(block[0], block[0] + part)))


class ReconstructTest(SimpleTestCase):
    """اختبارات إعادة البناء"""

    def test_two_leaves(self):
        """اختبار c=(1,1) و τ=5"""
        U = reconstruct(5.0, (1, 1), [[[0.0]], [[0.0]]])
        self.assertEqual(U.tolist(), [[0.0, 5.0], [5.0, 0.0]])

    def test_round_trip_exhaustive(self):
        """اختبار إعادة البناء بعد التفكيك عند τ لكل المصفوفات الصغيرة"""
        for k in range(1, 5):
            for H in itertools.product((1.0, 2.0, 3.0), repeat=k - 1):
                U = from_depths(H)
                depth = tau(U)
                parts = decompose_at(U, depth)
                self.assertEqual(reconstruct(depth, parts.composition, parts.submatrices), U)

    def test_refined_levels(self):
        """اختبار إعادة البناء من مستوى s < τ عبر مستوى τ"""
        U = from_depths([1.0, 3.0, 2.0, 3.0])
        outer = decompose_at(U, tau(U))
        for sub in outer.submatrices:
            if sub.k > 1:
                inner = decompose_at(sub, 1.5)
                self.assertEqual(reconstruct(tau(sub), inner.composition, inner.submatrices), sub)

    def test_nesting_error(self):
        """اختبار رفض مصفوفة جزئية أعمق من الجذر"""
        with self.assertRaises(NestingError):
            reconstruct(2.0, (2, 1), [[[0, 3], [3, 0]], [[0]]])


class PermuteAndDepthsTest(SimpleTestCase):
    """اختبارات التباديل والبناء من الأعماق"""

    def test_identity_and_inverse(self):
        """اختبار التبديل المحايد والمعكوس"""
        U = from_depths([1.0, 2.0, 0.5])
        np.testing.assert_array_equal(permute(U, [0, 1, 2, 3]), U.entries)
        P = [2, 0, 3, 1]
        inverse = list(np.argsort(P))
        np.testing.assert_array_equal(permute(permute(U, P), inverse), U.entries)

    def test_swap_two_leaves(self):
        """اختبار تبديل ورقتين"""
        np.testing.assert_array_equal(permute(validate([[0, 3], [3, 0]]), [1, 0]), [[0, 3], [3, 0]])

    def test_invalid_permutation(self):
        """اختبار رفض تبديل غير صالح"""
        with self.assertRaises(UltrametricError):
            permute(validate([[0, 3], [3, 0]]), [0, 0])

    def test_from_depths(self):
        """اختبار U_ij = max(H_i..H_{j−1})"""
        U = from_depths([1.0, 2.0])
        self.assertEqual(U[0, 1], 1.0)
        self.assertEqual(U[0, 2], 2.0)
        self.assertEqual(U[1, 2], 2.0)
        constant = from_depths([0.7] * 4)
        off = constant.entries[~np.eye(5, dtype=bool)]
        self.assertTrue(np.all(off == 0.7))

    def test_from_depths_always_planar(self):
        """اختبار صلاحية المخرجات لكل الأعماق الصغيرة وعينات عشوائية"""
        for k in range(2, 5):
            for H in itertools.product((0.0, 1.0, 2.0, 3.0), repeat=k - 1):
                validate(from_depths(H))
        rng = np.random.default_rng(11)
        for _ in range(500):
            validate(from_depths(rng.exponential(size=rng.integers(1, 6))))

    def test_compositions(self):
        """اختبار تعداد التركيبات"""
        for k in range(1, 7):
            items = list(compositions(k))
            self.assertEqual(len(items), 2 ** (k - 1))
            self.assertTrue(all(sum(c) == k for c in items))
        self.assertEqual(list(compositions(3)), [(3,), (2, 1), (1, 2), (1, 1, 1)])

    def test_planar_order(self):
        """اختبار الترتيب المعجمي لمسارات الأنساب"""
        self.assertEqual(planar_order([(1, 0), (0,), (1, 1, 0), (0, 1)]), [1, 3, 0, 2])

    def test_csv(self):
        """اختبار كتابة وقراءة CSV"""
        U = from_depths(FIGURE_DEPTHS)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'matrix.csv')
            write_matrix_csv(U, path)
            with open(path, encoding='utf-8') as handle:
                self.assertEqual(handle.readline().strip(), 'k')
            self.assertEqual(read_matrix_csv(path), U)


class FunctionalTest(SimpleTestCase):
    """اختبارات الدوال المنتجية"""

    def test_two_leaf_product(self):
        """اختبار c=(1,1) على مصفوفة ثنائية"""
        G = ProductFunctional.uniform((1, 1))
        self.assertEqual(eval_functional(G, validate([[0, 3], [3, 0]])), 1.0)

    def test_composition_mismatch(self):
        """اختبار أن عدم تطابق التركيبة يعطي 0"""
        G = ProductFunctional((2,), ConstantDepth(), (Constant(),))
        self.assertEqual(eval_functional(G, validate([[0, 3], [3, 0]])), 0.0)

    def test_figure_with_epsilon(self):
        """اختبار f = id على مثال التفرع الخماسي"""
        U = from_depths(FIGURE_DEPTHS)
        children = tuple(Constant(2.0) for _ in range(5))
        G = ProductFunctional((1, 2, 3, 2, 1), DepthPolynomial((0.0, 1.0)), children, epsilon=0.5)
        self.assertAlmostEqual(eval_functional(G, U), 4.0 * 2.0 ** 5)
        strict = ProductFunctional((1, 2, 3, 2, 1), DepthPolynomial((0.0, 1.0)), children)
        self.assertEqual(eval_functional(strict, U), 0.0)

    def test_epsilon_agreement_without_entries_in_gap(self):
        """اختبار تطابق ε = 0 و ε > 0 إذا لم تقع مدخلات في (τ−ε, τ)"""
        U = from_depths([3.0, 1.0, 3.0])
        nested = ProductFunctional.uniform((1, 2, 1))
        for eps in (0.0, 0.5, 1.9):
            G = ProductFunctional(nested.composition, DepthIndicator(2.0), nested.children, epsilon=eps)
            self.assertEqual(eval_functional(G, U), 1.0)

    def test_marks(self):
        """اختبار دالة العلامات على الأوراق"""
        U = validate([[0, 2], [2, 0]])
        G = ProductFunctional((1, 1), ConstantDepth(), (MarkPolynomial((0.0, 1.0)), MarkPolynomial((1.0,))))
        self.assertEqual(eval_functional(G, MarkedMatrix(U, (3.5, 7.0))), 3.5)

    def test_permutation_sum_of_symmetric_functional(self):
        """اختبار مجموع التباديل لدالة متناظرة = k!·القيمة"""
        U = from_depths([1.0, 2.0, 0.5])
        G = Constant(1.5)
        total = sum(eval_functional(G, permute(U, P)) for P in itertools.permutations(range(4)))
        self.assertAlmostEqual(total, math.factorial(4) * eval_functional(G, U))

    def test_non_interval_blocks_vanish(self):
        """اختبار أن الكتل غير المتتالية تعطي 0"""
        U = from_depths([1.0, 2.0])
        G = ProductFunctional.uniform((2, 1))
        self.assertEqual(eval_functional(G, U), 1.0)
        self.assertEqual(eval_functional(G, permute(U, [0, 2, 1])), 0.0)

    def test_json_round_trip(self):
        """اختبار تسلسل JSON للدوال"""
        inner = ProductFunctional((1, 1), DepthIndicator(0.25), (Constant(), Constant()))
        G = ProductFunctional((2, 1), DepthPolynomial((1.0, 0.5)), (inner, MarkPolynomial((0.0, 2.0))), epsilon=0.1)
        self.assertEqual(load_functional(dump_functional(G)), G)
        self.assertEqual(G.breakpoints(), (0.25,))

    def test_spec_errors(self):
        """اختبار رفض دوال غير متسقة"""
        with self.assertRaises(FunctionalSpecError):
            ProductFunctional((2, 1), ConstantDepth(), (Constant(),))
        with self.assertRaises(FunctionalSpecError):
            ProductFunctional((2, 1), ConstantDepth(), (MarkPolynomial((1.0,)), Constant()))
        with self.assertRaises(FunctionalSpecError):
            load_functional('{"type": "bogus"}')
