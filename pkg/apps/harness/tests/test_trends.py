"""
اختبارات اتجاه ذيل الحجم
BRLab - Branching Genealogy Laboratory
"""

import math

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from apps.core.rng import stream
from apps.spectral.exceptions import RegimeError
from apps.spectral.potentials import Potential

from ..exceptions import ValidationError
from ..services import Scheduler
from ..trends import TailTrend, _rank_size_slope, size_tail_trend


def _trend(rows, slope=-2.0, alpha=1.5, insufficient=False) -> TailTrend:
    frame = pd.DataFrame(rows, columns=['N', 'z0', 'probability'])
    return TailTrend(frame, 0.01, slope, 0.1, alpha, math.nan, insufficient)


class TailTrendTest(SimpleTestCase):
    """اختبارات خصائص TailTrend"""

    def test_gamma_and_error(self):
        trend = _trend([], slope=-1.8)
        self.assertAlmostEqual(trend.gamma, 2.0)
        self.assertAlmostEqual(trend.expected_slope, -2.0)
        self.assertAlmostEqual(trend.relative_error, 0.1)
        self.assertTrue(trend.within())
        self.assertFalse(trend.within(0.05))

    def test_insufficient_never_within(self):
        """اختبار أن الإحصاءات غير الكافية لا تنجح"""
        self.assertFalse(_trend([], slope=-2.0, insufficient=True).within())

    def test_monotone_in_level(self):
        """اختبار تناقص الاحتمال في z₀ لكل N"""
        good = _trend([(100, 0.01, 0.3), (100, 0.05, 0.1), (1000, 0.01, 0.03), (1000, 0.05, 0.01)])
        bad = _trend([(100, 0.01, 0.1), (100, 0.05, 0.2)])
        self.assertTrue(good.monotone_in_level)
        self.assertFalse(bad.monotone_in_level)

    def test_rank_size_slope(self):
        """اختبار ميل الرتبة-الحجم على عينة Pareto"""
        values = stream(3, 'pareto').pareto(1.5, 20000) + 1.0
        self.assertAlmostEqual(_rank_size_slope(values), -1.5, delta=0.1)
        self.assertTrue(math.isnan(_rank_size_slope(np.ones(5))))


class SizeTailTrendTest(SimpleTestCase):
    """اختبارات حراسة size_tail_trend"""

    def test_needs_three_sizes(self):
        with self.assertRaises(ValidationError):
            size_tail_trend(Potential.step(3.0), [100, 1000], 1.0, 0.01, 1.0, 10, Scheduler(1, 10), 0)

    def test_needs_levels(self):
        with self.assertRaises(ValidationError):
            size_tail_trend(Potential.step(3.0), [100, 1000, 10000], 1.0, 0.01, 1.0, 10,
                            Scheduler(1, 10), 0, levels=())

    def test_pulled_regime_rejected(self):
        """اختبار رفض الجهد الصفري (خارج النظام شبه المدفوع)"""
        with self.assertRaises(RegimeError):
            size_tail_trend(Potential.zero(), [100, 1000, 10000], 1.0, 0.01, 1.0, 10, Scheduler(1, 10), 0)

    def test_independent_of_worker_count(self):
        """اختبار تطابق الجدول مع عامل واحد وعاملين"""
        args = (Potential.step(3.0), [100, 300, 1000], 1.0, 5e-4, 1.0, 6)
        serial = size_tail_trend(*args, Scheduler(1, 2), 7, 'trend')
        parallel = size_tail_trend(*args, Scheduler(2, 2), 7, 'trend')
        pd.testing.assert_frame_equal(serial.frame, parallel.frame)
        self.assertEqual(serial.frame['replicates'].tolist(), [6] * 9)
        self.assertEqual(sorted(serial.frame['N'].unique()), [100.0, 300.0, 1000.0])

