"""
اختبارات خدمات منصة التجارب
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على اختبارات:
1. قراءة ملف التجربة والتحقق منه
2. المقارنات الإحصائية والحتمية وتصحيح Bonferroni
3. كتابة CSV و JSON وإعادة التحقق منها
4. حتمية المجدول مع اختلاف عدد العمال
"""

import dataclasses
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings
from scipy import stats

from apps.core.stats import Estimate

from ..exceptions import OutputPathError, ValidationError
from ..services import (
    REPORT_COLUMNS,
    Comparison,
    ExperimentContext,
    ExperimentReport,
    ExperimentSpec,
    ResultSink,
    Scheduler,
    bonferroni_threshold,
    verify_report,
)

SPEC_TEXT = """
[experiment]
name = bound-shapes
replicates = 500
seed = 11
threshold = 3.5
bonferroni = yes
targets = csbp, spectral

[params]
R = 1 2
kmax = 8
"""


def _uniform_chunk(size, rng):
    return rng.random(size)


class ExperimentSpecTest(SimpleTestCase):
    """اختبارات ملف التجربة"""

    def test_parse(self):
        """اختبار قراءة الأقسام والمعاملات"""
        spec = ExperimentSpec.from_text(SPEC_TEXT)
        self.assertEqual(spec.name, 'bound-shapes')
        self.assertEqual(spec.replicates, 500)
        self.assertEqual(spec.seed, 11)
        self.assertEqual(spec.threshold, 3.5)
        self.assertTrue(spec.bonferroni)
        self.assertEqual(spec.targets, ('csbp', 'spectral'))
        self.assertEqual(spec.get_floats('R', ()), [1.0, 2.0])
        self.assertEqual(spec.get_int('kmax', 12), 8)
        self.assertEqual(spec.get_float('missing', 0.25), 0.25)

    def test_bool_params(self):
        spec = ExperimentSpec.from_text('[experiment]\nname = x\n[params]\nbridge = yes\nflag = maybe\n')
        self.assertTrue(spec.get_bool('bridge', False))
        self.assertFalse(spec.get_bool('missing', False))
        with self.assertRaises(ValidationError):
            spec.get_bool('flag', True)

    def test_params_keep_case(self):
        """اختبار الحفاظ على حالة أسماء المعاملات"""
        spec = ExperimentSpec.from_text(SPEC_TEXT)
        self.assertIn('R', spec.params)
        self.assertNotIn('r', spec.params)

    def test_zero_replicates_rejected(self):
        """اختبار رفض عدد تكرارات صفري"""
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[experiment]\nname = bound-shapes\nreplicates = 0\n')

    def test_missing_section_and_name(self):
        """اختبار رفض الملف بدون قسم أو اسم"""
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[params]\nL = 4\n')
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[experiment]\nseed = 1\n')

    def test_bad_values_rejected(self):
        """اختبار رفض القيم غير الصالحة"""
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[experiment]\nname = x\nseed = -1\n')
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[experiment]\nname = x\nbonferroni = maybe\n')
        with self.assertRaises(ValidationError):
            ExperimentSpec.from_text('[experiment]\nname = x\n[params]\nL = ten\n').get_float('L', 1.0)

    def test_params_hash(self):
        """اختبار أن البصمة تتبع المعاملات ولا تتبع مسار الإخراج"""
        spec = ExperimentSpec.from_text(SPEC_TEXT)
        moved = dataclasses.replace(spec, output=Path('/elsewhere'))
        changed = dataclasses.replace(spec, params={**spec.params, 'kmax': '9'})
        self.assertEqual(spec.params_hash, moved.params_hash)
        self.assertNotEqual(spec.params_hash, changed.params_hash)
        self.assertEqual(len(spec.params_hash), 64)

    @override_settings(LAB_OUTPUT_DIR='/tmp/lab-reports')
    def test_default_output_dir(self):
        """اختبار مجلد الإخراج الافتراضي من الإعدادات"""
        spec = ExperimentSpec.from_text(SPEC_TEXT)
        self.assertEqual(spec.output_dir, Path('/tmp/lab-reports/bound-shapes'))


class ComparisonTest(SimpleTestCase):
    """اختبارات المقارنات والعتبات"""

    def test_statistical(self):
        """اختبار z للمقارنة الإحصائية"""
        record = Comparison.statistical('mean', Estimate(1.1, 0.05, 100), 1.0).record('e', 'h', 3.0)
        self.assertAlmostEqual(record.z, 2.0)
        self.assertTrue(record.passed)
        record = Comparison.statistical('mean', Estimate(1.2, 0.05, 100), 1.0).record('e', 'h', 3.0)
        self.assertEqual(record.verdict, 'fail')

    def test_deterministic_tolerance(self):
        """اختبار أن |lhs − rhs| ≤ tol يكافئ |z| ≤ العتبة"""
        inside = Comparison.deterministic('x', 1.0 + 1e-9, 1.0, 1e-8).record('e', 'h', 3.0)
        outside = Comparison.deterministic('x', 1.0 + 2e-8, 1.0, 1e-8).record('e', 'h', 3.0)
        self.assertTrue(inside.passed)
        self.assertAlmostEqual(inside.lhs_se, 1e-8 / 3.0)
        self.assertFalse(outside.passed)

    def test_exact_match_with_zero_tolerance(self):
        """اختبار التسامح الصفري"""
        self.assertTrue(Comparison.deterministic('flag', 1.0, 1.0, 0.0).record('e', 'h', 3.0).passed)
        self.assertFalse(Comparison.deterministic('flag', 0.0, 1.0, 0.0).record('e', 'h', 3.0).passed)

    def test_negative_tolerance_rejected(self):
        with self.assertRaises(ValidationError):
            Comparison.deterministic('x', 0.0, 0.0, -1.0)

    def test_nan_fails(self):
        """اختبار أن z غير المعرّف يُحكم عليه بالفشل"""
        record = Comparison.statistical('nan', Estimate(math.nan, 0.1, 10), 1.0).record('e', 'h', 3.0)
        self.assertEqual(record.verdict, 'fail')

    def test_bonferroni(self):
        """اختبار تصحيح Bonferroni"""
        self.assertEqual(bonferroni_threshold(3.0, 1), 3.0)
        corrected = bonferroni_threshold(3.0, 10)
        self.assertAlmostEqual(corrected, stats.norm.isf(stats.norm.sf(3.0) / 10.0), places=10)
        self.assertGreater(bonferroni_threshold(3.0, 100), corrected)
        self.assertGreater(corrected, 3.0)

    def test_report_uses_corrected_threshold(self):
        spec = ExperimentSpec.from_text(SPEC_TEXT)
        comparisons = [Comparison.deterministic(f'c{i}', 0.0, 0.0, 0.1) for i in range(4)]
        report = ExperimentReport.from_comparisons(spec, comparisons)
        self.assertAlmostEqual(report.threshold, bonferroni_threshold(3.5, 4))
        self.assertTrue(report.all_passed)


class ResultSinkTest(SimpleTestCase):
    """اختبارات كتابة التقارير"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        spec = ExperimentSpec(name='demo', seed=3, output=Path(self.tmp.name))
        self.report = ExperimentReport.from_comparisons(spec, [
            Comparison.statistical('mean, scaled', Estimate(1.01, 0.01, 50), 1.0),
            Comparison.deterministic('closed "form"', 2.0, 0.0, 1e-6),
        ])
        self.csv_path, self.json_path = ResultSink(self.tmp.name).write(self.report)

    def test_csv_layout(self):
        """اختبار صف العنوان ونهايات CRLF واقتباس الحقول"""
        raw = self.csv_path.read_bytes()
        lines = raw.split(b'\r\n')
        self.assertEqual(lines[0].decode(), ','.join(REPORT_COLUMNS))
        self.assertIn(b'"mean, scaled"', raw)
        self.assertIn(b'"closed ""form"""', raw)
        self.assertNotIn(b'\n', raw.replace(b'\r\n', b''))

    def test_json_summary(self):
        """اختبار ملخص JSON"""
        data = json.loads(self.json_path.read_text(encoding='utf-8'))
        self.assertEqual(data['experiment'], 'demo')
        self.assertEqual(data['seed'], 3)
        self.assertEqual((data['pass'], data['fail']), (1, 1))
        self.assertEqual(len(data['records']), 2)
        self.assertEqual(data['records'][1]['verdict'], 'fail')

    def test_verify(self):
        """اختبار إعادة حساب الأحكام من JSON"""
        check = verify_report(self.json_path)
        self.assertEqual(check.records, 2)
        self.assertEqual(check.failed, 1)
        self.assertEqual(check.mismatches, ())
        self.assertFalse(check.ok)

    def test_verify_detects_tampering(self):
        """اختبار كشف حكم لا يطابق أرقامه"""
        data = json.loads(self.json_path.read_text(encoding='utf-8'))
        data['records'][1]['verdict'] = 'pass'
        self.json_path.write_text(json.dumps(data), encoding='utf-8')
        self.assertEqual(verify_report(self.json_path).mismatches, ('closed "form"',))

    def test_verify_unreadable(self):
        with self.assertRaises(ValidationError):
            verify_report(Path(self.tmp.name) / 'missing.json')

    def test_unwritable_directory(self):
        """اختبار رفض مسار إخراج تحت ملف عادي"""
        blocker = Path(self.tmp.name) / 'file'
        blocker.write_text('x')
        with self.assertRaises(OutputPathError):
            ResultSink(blocker / 'reports')


class SchedulerTest(SimpleTestCase):
    """اختبارات حتمية المجدول"""

    def test_chunks_are_ordered(self):
        """اختبار حجم الدفعات وترتيبها"""
        chunks = Scheduler(workers=1, chunk=40).replicates(_uniform_chunk, 100, 5, 'demo')
        self.assertEqual([c.size for c in chunks], [40, 40, 20])

    def test_independent_of_worker_count(self):
        """اختبار تطابق العينات مع عامل واحد وعدة عمال"""
        serial = np.concatenate(Scheduler(workers=1, chunk=25).replicates(_uniform_chunk, 100, 5, 'demo'))
        parallel = np.concatenate(Scheduler(workers=2, chunk=25).replicates(_uniform_chunk, 100, 5, 'demo'))
        np.testing.assert_array_equal(serial, parallel)

    def test_seed_and_name_change_streams(self):
        base = np.concatenate(Scheduler(1, 50).replicates(_uniform_chunk, 50, 5, 'demo'))
        other_seed = np.concatenate(Scheduler(1, 50).replicates(_uniform_chunk, 50, 6, 'demo'))
        other_name = np.concatenate(Scheduler(1, 50).replicates(_uniform_chunk, 50, 5, 'other'))
        self.assertFalse(np.array_equal(base, other_seed))
        self.assertFalse(np.array_equal(base, other_name))

    def test_grid(self):
        self.assertEqual(Scheduler(workers=1).grid(pow, [(2, 3), (3, 2)]), [8, 9])

    def test_context_estimate_merges_chunks(self):
        """اختبار أن دمج تقديرات الدفعات يطابق العينات المجمّعة"""
        ctx = ExperimentContext(ExperimentSpec('demo', replicates=100, seed=5), Scheduler(1, 25))
        merged = ctx.estimate(_uniform_chunk)
        pooled = Estimate.from_samples(ctx.samples(_uniform_chunk))
        self.assertEqual(merged.n, 100)
        self.assertAlmostEqual(merged.value, pooled.value)
        self.assertAlmostEqual(merged.stderr, pooled.stderr, delta=0.1 * pooled.stderr)

    def test_context_estimate_with_single_sample_chunk(self):
        ctx = ExperimentContext(ExperimentSpec('demo', replicates=101, seed=5), Scheduler(1, 25))
        estimate = ctx.estimate(_uniform_chunk)
        self.assertEqual(estimate.n, 101)
        self.assertTrue(math.isfinite(estimate.stderr))
