"""
اختبارات أمر lab وحفظ السجل
BRLab - Branching Genealogy Laboratory
"""

import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from ..models import ComparisonRow, ExperimentRun


class LabCommandTest(TestCase):
    """اختبارات أمر lab"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.folder = Path(self.tmp.name)

    def _spec(self, body: str) -> Path:
        path = self.folder / 'experiment.ini'
        path.write_text(body.format(out=self.folder / 'out'), encoding='utf-8')
        return path

    def test_list(self):
        out = StringIO()
        call_command('lab', 'list', stdout=out)
        text = out.getvalue()
        self.assertIn('bound-shapes', text)
        self.assertIn('size-tail-trend', text)

    def test_run_persists(self):
        """اختبار التشغيل وحفظ التشغيل وصفوفه"""
        path = self._spec('[experiment]\nname = bound-shapes\nseed = 1\noutput = {out}\n[params]\nkmax = 6\n')
        out = StringIO()
        call_command('lab', 'run', str(path), stdout=out)
        self.assertIn('✓ bound-shapes', out.getvalue())

        run = ExperimentRun.objects.get()
        self.assertEqual(run.name, 'bound-shapes')
        self.assertTrue(run.all_passed)
        self.assertEqual(run.rows.count(), 9)
        self.assertTrue(Path(run.csv_path).exists())
        self.assertEqual(ComparisonRow.objects.filter(verdict='fail').count(), 0)

    def test_run_without_persist(self):
        path = self._spec('[experiment]\nname = bound-shapes\noutput = {out}\n')
        call_command('lab', 'run', str(path), '--no-persist', stdout=StringIO())
        self.assertFalse(ExperimentRun.objects.exists())
        self.assertTrue((self.folder / 'out' / 'bound-shapes.json').exists())

    def test_unknown_experiment(self):
        """اختبار رمز الخروج عند اسم مجهول"""
        path = self._spec('[experiment]\nname = nothing\noutput = {out}\n')
        with self.assertRaises(CommandError) as ctx:
            call_command('lab', 'run', str(path), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_invalid_file(self):
        path = self._spec('[experiment]\nname = bound-shapes\nreplicates = 0\n')
        with self.assertRaises(CommandError):
            call_command('lab', 'run', str(path), stdout=StringIO())

    def test_verify(self):
        """اختبار التحقق من تقرير ناجح ثم تقرير فيه فشل"""
        path = self._spec('[experiment]\nname = bound-shapes\noutput = {out}\n')
        call_command('lab', 'run', str(path), '--no-persist', stdout=StringIO())
        report = self.folder / 'out' / 'bound-shapes.json'

        out = StringIO()
        call_command('lab', 'verify', str(report), stdout=out)
        self.assertIn('9 comparisons verified', out.getvalue())

        data = json.loads(report.read_text(encoding='utf-8'))
        data['records'][0]['lhs'] = 3.0
        data['records'][0]['verdict'] = 'fail'
        report.write_text(json.dumps(data), encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            call_command('lab', 'verify', str(report), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)
