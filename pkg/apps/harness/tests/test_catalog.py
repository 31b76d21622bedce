"""
اختبارات كتالوج التجارب والتشغيل
BRLab - Branching Genealogy Laboratory
"""

import hashlib
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from ..catalog import CATALOG, catalog_names, get_experiment
from ..exceptions import UnknownExperimentError, ValidationError
from ..runner import run_experiment
from ..services import ExperimentSpec, Scheduler

EXPECTED = {
    'spectral-closed-form', 'eigen-tail', 'spectral-gap', 'green-check',
    'many-to-few-k1', 'many-to-few-k2', 'laplace-flow', 'reduced-martingale',
    'csbp-moment-oracle', 'entrance-law', 'bound-shapes', 'ultrametric-suite',
    'reversed-martingale', 'jump-moment-scaling', 'size-tail-trend',
}


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class CatalogTest(SimpleTestCase):
    """اختبارات سجل التجارب"""

    def test_names(self):
        self.assertEqual(set(catalog_names()), EXPECTED)
        self.assertEqual(catalog_names(), sorted(CATALOG))

    def test_entries_describe_targets(self):
        for name in catalog_names():
            entry = get_experiment(name)
            self.assertEqual(entry.name, name)
            self.assertTrue(entry.targets)
            self.assertTrue(entry.description)

    def test_unknown_name(self):
        """اختبار رفض اسم غير موجود"""
        with self.assertRaises(UnknownExperimentError) as ctx:
            get_experiment('no-such-experiment')
        self.assertIn('no-such-experiment', str(ctx.exception))


class RunExperimentTest(SimpleTestCase):
    """اختبارات تشغيل التجارب الرخيصة بدون قاعدة بيانات"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def _run(self, text: str, folder: str = 'run', workers: int = 1):
        spec = ExperimentSpec.from_text(text)
        spec = ExperimentSpec(spec.name, spec.replicates, spec.seed, spec.threshold, spec.bonferroni,
                              self.out / folder, spec.targets, spec.params)
        return run_experiment(spec, persist=False, scheduler=Scheduler(workers, 50)), spec

    def test_bound_shapes(self):
        """اختبار أن حد u_k لا يُنتهك على الشبكة"""
        report, _ = self._run('[experiment]\nname = bound-shapes\n')
        self.assertEqual(len(report.records), 9)
        self.assertTrue(report.all_passed)

    def test_spectral_closed_form(self):
        """اختبار الصيغة المغلقة لـ λ₁ و v₁ عند W ≡ 0"""
        report, _ = self._run('[experiment]\nname = spectral-closed-form\n')
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_laplace_flow(self):
        report, _ = self._run('[experiment]\nname = laplace-flow\n')
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_ultrametric_suite(self):
        """اختبار مجموعة فوق المترية مع حالات عشوائية قليلة"""
        report, _ = self._run('[experiment]\nname = ultrametric-suite\nseed = 4\n[params]\nrandom_cases = 300\n')
        self.assertEqual(len(report.records), 4)
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_many_to_few_k1(self):
        """اختبار صيغة k=1 لـ BBM بعدد تكرارات صغير"""
        report, _ = self._run(
            '[experiment]\nname = many-to-few-k1\nreplicates = 400\nseed = 2\nthreshold = 4\n'
            '[params]\nL = 4\nx0 = 2\nt = 1\n'
        )
        self.assertEqual(report.records[0].rhs, 1.0)
        self.assertTrue(report.all_passed, report.records[0].to_dict())

    def test_csbp_moment_oracle_reports_probe_bias(self):
        """اختبار أن كتلة الأزواج تُقارن أيضاً بقيمة التكرار 0.5"""
        report, _ = self._run('[experiment]\nname = csbp-moment-oracle\nreplicates = 600\nseed = 3\nthreshold = 4\n')
        labels = [r.label for r in report.records]
        self.assertEqual(len(labels), 3)
        full = report.records[2]
        self.assertIn('pair moment recursion', full.label)
        self.assertAlmostEqual(full.rhs, 0.5, places=6)
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_jump_moment_scaling_endpoint_record(self):
        """اختبار أن قياس العمودين المُعاد تحجيمه يُقارن بتكرار CSBP"""
        report, _ = self._run(
            '[experiment]\nname = jump-moment-scaling\nreplicates = 4000\nseed = 8\nthreshold = 4\n'
            '[params]\npotential = step:3\nk = 2 3\nendpoint_L = 5\nt = 0.5\ndt = 0.01\n'
        )
        self.assertEqual(len(report.records), 3)
        endpoint = report.records[2]
        self.assertIn('CSBP recursion', endpoint.label)
        self.assertGreater(endpoint.lhs_se, 0.0)
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_entrance_law_records(self):
        """اختبار مقارنتي قانون الدخول: المسبار والشرطية"""
        report, _ = self._run(
            '[experiment]\nname = entrance-law\nreplicates = 500\nseed = 6\nthreshold = 4\n[params]\ntheta = 1\n'
        )
        self.assertEqual(len(report.records), 2)
        self.assertAlmostEqual(report.records[1].rhs, 0.5, delta=1e-6)
        self.assertLess(report.records[0].rhs, 0.5)
        self.assertTrue(report.all_passed, [r.to_dict() for r in report.records])

    def test_same_seed_same_bytes(self):
        """اختبار تطابق ملفات الإخراج لنفس البذرة ومع عدد عمال مختلف"""
        text = '[experiment]\nname = ultrametric-suite\nseed = 9\n[params]\nrandom_cases = 100\n'
        _, first = self._run(text, 'a')
        _, second = self._run(text, 'b', workers=2)
        for suffix in ('csv', 'json'):
            self.assertEqual(
                _digest(first.output_dir / f'ultrametric-suite.{suffix}'),
                _digest(second.output_dir / f'ultrametric-suite.{suffix}'),
            )

    def test_unknown_experiment_before_output(self):
        """اختبار أن الاسم المجهول يُرفض قبل إنشاء مجلد الإخراج"""
        spec = ExperimentSpec('missing', output=self.out / 'never')
        with self.assertRaises(UnknownExperimentError):
            run_experiment(spec, persist=False)
        self.assertFalse((self.out / 'never').exists())

    def test_invalid_spec(self):
        spec = ExperimentSpec('bound-shapes', replicates=0, output=self.out)
        with self.assertRaises(ValidationError):
            run_experiment(spec, persist=False)
