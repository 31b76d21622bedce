"""
اختبارات النواة المشتركة
BRLab - Branching Genealogy Laboratory
"""

import math

import numpy as np
from django.test import SimpleTestCase

from .exceptions import LabError
from .rng import chunk_sizes, experiment_key, stream
from .stats import Estimate, merge, ratio, z_score


class StreamTest(SimpleTestCase):
    """اختبارات تيارات Philox"""

    def test_reproducible(self):
        """اختبار أن نفس المفتاح يعطي نفس التيار"""
        a = stream(7, 'demo', 3).random(10)
        b = stream(7, 'demo', 3).random(10)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        base = stream(7, 'demo', 3).random(10)
        for other in (stream(8, 'demo', 3), stream(7, 'other', 3), stream(7, 'demo', 4)):
            self.assertFalse(np.array_equal(base, other.random(10)))

    def test_experiment_key_stable(self):
        self.assertEqual(experiment_key('many-to-few-k1'), experiment_key('many-to-few-k1'))
        self.assertNotEqual(experiment_key('a'), experiment_key('b'))

    def test_negative_seed_rejected(self):
        with self.assertRaises(ValueError):
            stream(-1, 'demo')

    def test_chunk_sizes(self):
        """اختبار تقسيم التكرارات"""
        self.assertEqual(chunk_sizes(10, 4), [4, 4, 2])
        self.assertEqual(chunk_sizes(8, 4), [4, 4])
        self.assertEqual(chunk_sizes(0, 4), [])
        self.assertEqual(sum(chunk_sizes(100001, 2000)), 100001)


class EstimateTest(SimpleTestCase):
    """اختبارات التقديرات والدمج"""

    def test_from_samples(self):
        est = Estimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]))
        self.assertAlmostEqual(est.value, 2.5)
        self.assertAlmostEqual(est.stderr, np.std([1, 2, 3, 4], ddof=1) / 2.0)
        self.assertEqual(est.n, 4)

    def test_degenerate_samples(self):
        self.assertTrue(math.isnan(Estimate.from_samples([]).value))
        self.assertEqual(Estimate.from_samples([3.0]).stderr, math.inf)

    def test_z_score(self):
        """اختبار z مع طرفين حتميين"""
        self.assertAlmostEqual(z_score(1.3, 0.1, 1.0, 0.0), 3.0)
        self.assertAlmostEqual(z_score(1.5, 0.3, 1.0, 0.4), 1.0)
        self.assertEqual(z_score(1.0, 0.0, 1.0, 0.0), 0.0)
        self.assertEqual(z_score(2.0, 0.0, 1.0, 0.0), math.inf)

    def test_merge_matches_pooled_mean(self):
        """اختبار أن الدمج يطابق متوسط العينات المجمّعة"""
        rng = stream(1, 'merge')
        parts = [rng.normal(size=n) for n in (100, 250, 50)]
        merged = merge(Estimate.from_samples(p) for p in parts)
        self.assertEqual(merged.n, 400)
        self.assertAlmostEqual(merged.value, float(np.concatenate(parts).mean()))
        self.assertAlmostEqual(merged.stderr, 1.0 / 20.0, delta=0.01)

    def test_ratio(self):
        """اختبار نسبة تقديرين بتقريب دلتا"""
        result = ratio(Estimate(2.0, 0.2, 10), Estimate(4.0, 0.4, 10))
        self.assertAlmostEqual(result.value, 0.5)
        self.assertAlmostEqual(result.stderr, 0.5 * math.hypot(0.1, 0.1))

    def test_scaled(self):
        est = Estimate(2.0, 0.1, 5).scaled(-3.0)
        self.assertEqual((est.value, est.n), (-6.0, 5))
        self.assertAlmostEqual(est.stderr, 0.3)


class LabErrorTest(SimpleTestCase):
    def test_context_in_message(self):
        err = LabError('Bad value', b=2, a=1)
        self.assertEqual(str(err), "Bad value (a=1, b=2)")
        self.assertEqual(err.context, {'a': 1, 'b': 2})
