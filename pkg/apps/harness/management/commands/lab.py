"""
Management Command لتشغيل تجارب الكتالوج والتحقق من تقاريرها
BRLab - Branching Genealogy Laboratory

الاستخدام:
    python manage.py lab list
    python manage.py lab run experiments/many_to_few_k1.ini
    python manage.py lab run experiments/green.ini --workers 4 --no-persist
    python manage.py lab verify lab_output/green-check/green-check.json

رمز الخروج 0 عند نجاح كل المقارنات، و 1 عند فشل أي منها أو عند خطأ.
"""

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import LabError
from apps.harness.catalog import CATALOG, catalog_names
from apps.harness.runner import run_experiment
from apps.harness.services import ExperimentSpec, Scheduler, verify_report


class Command(BaseCommand):
    help = 'تشغيل تجارب التحقق وكتابة تقارير CSV/JSON'

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest='action', required=True)

        run = sub.add_parser('run', help='تشغيل ملف تجربة')
        run.add_argument('spec', help='ملف التجربة ([experiment] و [params])')
        run.add_argument('--workers', type=int, default=None, help='عدد العمليات (افتراضياً LAB_WORKERS)')
        run.add_argument('--chunk', type=int, default=None, help='حجم الدفعة (افتراضياً LAB_CHUNK_SIZE)')
        run.add_argument('--no-persist', action='store_true', help='عدم حفظ السجل في قاعدة البيانات')

        sub.add_parser('list', help='عرض التجارب المتاحة')

        verify = sub.add_parser('verify', help='إعادة حساب الأحكام من تقرير JSON')
        verify.add_argument('report', help='مسار ملف JSON')

    def handle(self, *args, **options):
        action = options['action']
        try:
            if action == 'list':
                self._list()
            elif action == 'run':
                self._run(options)
            else:
                self._verify(options['report'])
        except LabError as exc:
            raise CommandError(str(exc), returncode=1) from exc

    def _list(self):
        for name in catalog_names():
            entry = CATALOG[name]
            self.stdout.write(f'{name:<22} [{", ".join(entry.targets)}] {entry.description}')

    def _run(self, options):
        spec = ExperimentSpec.from_file(options['spec'])
        scheduler = Scheduler(options['workers'], options['chunk'])
        report = run_experiment(spec, persist=not options['no_persist'], scheduler=scheduler)

        for record in report.records:
            mark = '✓' if record.passed else '✗'
            self.stdout.write(f'  {mark} {record.label}: {record.lhs:.6g} ± {record.lhs_se:.2g} '
                              f'vs {record.rhs:.6g} (z={record.z:.2f})')
        if not report.all_passed:
            raise CommandError(f'{report.failed} of {len(report.records)} comparisons failed '
                               f'(threshold {report.threshold:.3f})', returncode=1)
        self.stdout.write(self.style.SUCCESS(f'✓ {spec.name}: {report.passed} comparisons passed'))

    def _verify(self, path):
        check = verify_report(path)
        if check.mismatches:
            raise CommandError(f'Verdicts do not match their numbers: {", ".join(check.mismatches)}', returncode=1)
        if check.failed:
            raise CommandError(f'{check.failed} of {check.records} comparisons fail at threshold '
                               f'{check.threshold:.3f}', returncode=1)
        self.stdout.write(self.style.SUCCESS(f'✓ {check.experiment}: {check.records} comparisons verified'))
