"""
Management Command لحل المسألة الطيفية وطباعة الكميات الأساسية
BRLab - Branching Genealogy Laboratory
"""

import json

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import LabError
from apps.spectral.potentials import Potential
from apps.spectral.services import (
    cutoff_geometry,
    gap_scaling,
    harmonic_pair,
    residual_check,
    solve_slp,
)


class Command(BaseCommand):
    help = 'حل مسألة Sturm–Liouville لجهد معطى وطباعة λ₁ و λ₁,∞ والنظام'

    def add_arguments(self, parser):
        parser.add_argument('--potential', default='step:3', help="zero | step:B[:edge] | file:path.csv")
        parser.add_argument('--L', type=float, default=20.0, help='طول المجال')
        parser.add_argument('--tol', type=float, default=1e-10)
        parser.add_argument('--gap', nargs='*', type=float, help='أطوال لانحدار الفجوة')
        parser.add_argument('--cutoff', nargs=2, type=float, metavar=('N', 'A'), help='هندسة القطع')
        parser.add_argument('--json', action='store_true', help='إخراج JSON')

    def handle(self, *args, **options):
        try:
            potential = Potential.from_spec(options['potential'])
            sol = solve_slp(potential, options['L'], tol=options['tol'])
            report = sol.summary()
            report['potential'] = potential.to_dict()
            report['residual'] = residual_check(sol)
            report['h_inner_product'] = harmonic_pair(sol).inner_product()
            if options['gap']:
                gaps = gap_scaling(potential, options['gap'])
                report['gap_slope'] = gaps.slope
                report['gap_expected_slope'] = gaps.expected_slope
            if options['cutoff']:
                N, A = options['cutoff']
                geometry = cutoff_geometry(sol.mu, sol.beta, N, A)
                report['cutoff'] = geometry.__dict__
        except LabError as exc:
            raise CommandError(str(exc)) from exc

        if options['json']:
            self.stdout.write(json.dumps(report, indent=2, sort_keys=True, default=str))
            return
        for key, value in report.items():
            self.stdout.write(f'  - {key}: {value}')
        self.stdout.write(self.style.SUCCESS(f"\n✓ النظام: {report['regime']}"))
