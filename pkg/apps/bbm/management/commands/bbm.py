"""
Management Command لمحاكاة BBM وتصدير السلاسل الزمنية
BRLab - Branching Genealogy Laboratory

الاستخدام:
    python manage.py bbm --potential zero --L 5 --x0 2 --t 2 --replicates 1000 --output series.csv
    python manage.py bbm --potential step:4 --reversed --z0 1 --t 10 --replicates 500
    python manage.py bbm --L 6 --x0 3 --t 3 --genealogy out/genealogy
    python manage.py bbm --potential step:3 --escape --lengths 4 6 8 --c 0.5 --replicates 500
    python manage.py bbm --L 4 --x0 3.5 --equilibrium --times 0.1 1 3 --replicates 1000
"""

import json
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from apps.bbm.estimators import equilibrium_ks, reversed_escape
from apps.bbm.services import BBMConfig, mmm_sample, run, run_reversed
from apps.core.exceptions import LabError
from apps.core.rng import stream
from apps.spectral.exceptions import RegimeError
from apps.spectral.potentials import Potential
from apps.spectral.services import harmonic_pair, limit_solution, reversed_quantities, solve_slp
from apps.ultrametric.services import write_matrix_csv


class Command(BaseCommand):
    help = 'محاكاة الحركة البراونية المتفرعة على [0, L] أو العملية المعكوسة'

    def add_arguments(self, parser):
        parser.add_argument('--potential', default='zero', help='zero | step:B[:edge] | file:path.csv')
        parser.add_argument('--L', type=float, default=5.0, help='طول المجال')
        parser.add_argument('--x0', type=float, default=None, help='نقطة البداية (افتراضياً L/2)')
        parser.add_argument('--t', type=float, default=1.0, help='الأفق')
        parser.add_argument('--dt', type=float, default=None)
        parser.add_argument('--replicates', type=int, default=100)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--every', type=int, default=None, help='عدد الخطوات بين تسجيلين')
        parser.add_argument('--reversed', action='store_true', help='العملية المعكوسة (انجراف +μ، قتل عند 0)')
        parser.add_argument('--bridge', action='store_true', help='تصحيح جسر براوني للقتل بين خطوتين')
        parser.add_argument('--z0', type=float, default=1.0, help='بداية العملية المعكوسة')
        parser.add_argument('--output', default=None, help='ملف CSV للسلاسل الزمنية (وإلا الإخراج القياسي)')
        parser.add_argument('--summary', default=None, help='ملف JSON للملخص')
        parser.add_argument('--genealogy', default=None, help='مجلد لمصفوفات الأنساب لكل تكرار')
        parser.add_argument('--N', type=float, default=1.0, help='مقياس المجتمع لأوزان 1/N^γ في الأنساب')
        parser.add_argument('--gamma', type=float, default=1.0, help='الأس γ لأوزان الأنساب')
        parser.add_argument('--escape', action='store_true',
                            help='احتمال بلوغ العملية المعكوسة الموضع 1 قبل ε لكل طول في --lengths')
        parser.add_argument('--equilibrium', action='store_true',
                            help='إحصائية KS بين مواقع الجسيمات و h̃ عند كل زمن في --times')
        parser.add_argument('--lengths', nargs='*', type=float, default=[4.0, 6.0, 8.0])
        parser.add_argument('--c', type=float, default=0.5, help='البداية (1−c)L للعملية المعكوسة')
        parser.add_argument('--delta1', type=float, default=0.2, help='ε = (1−δ₁)L/β')
        parser.add_argument('--times', nargs='*', type=float, default=[0.5, 1.0, 2.0, 4.0])

    def handle(self, *args, **options):
        try:
            potential = Potential.from_spec(options['potential'])
            rng = stream(options['seed'], 'bbm')
            if options['escape']:
                frame, summary = self._escape(potential, rng, options)
            elif options['equilibrium']:
                frame, summary = self._equilibrium(potential, rng, options)
            elif options['reversed']:
                frame, summary = self._reversed(potential, rng, options)
            else:
                frame, summary = self._forward(potential, rng, options)
        except LabError as exc:
            raise CommandError(str(exc)) from exc

        if options['output']:
            frame.to_csv(options['output'], index=False)
            self.stdout.write(self.style.SUCCESS(f"✓ تمت كتابة {len(frame)} صف إلى {options['output']}"))
        else:
            self.stdout.write(frame.to_csv(index=False))
        text = json.dumps(summary, indent=2, sort_keys=True)
        if options['summary']:
            Path(options['summary']).write_text(text, encoding='utf-8')
        else:
            self.stderr.write(text)

    # ========== Forward ==========

    def _forward(self, potential, rng, options):
        L = options['L']
        x0 = options['x0'] if options['x0'] is not None else L / 2.0
        sol = solve_slp(potential, L)
        pair = harmonic_pair(sol)
        observables = {'W_additive': pair.h_at}
        try:
            observables['W_limit'] = limit_solution(potential).h_at
        except RegimeError:
            pass
        config = BBMConfig.forward(potential, sol.mu, L, options['dt'], bridge=options['bridge'])
        result = run(config, x0, options['t'], rng, observables=observables,
                     n_replicates=options['replicates'], every=options['every'])
        frame = result.frame()
        final = result.final('W_additive')
        summary = {
            'mode': 'forward',
            'potential': potential.to_dict(),
            'L': L,
            'x0': x0,
            't': options['t'],
            'dt': config.dt,
            'replicates': options['replicates'],
            'seed': options['seed'],
            'mu': sol.mu,
            'w': sol.w,
            'survival': float(np.mean(result.final('Z') > 0)),
            'mean_Z': float(np.mean(result.final('Z'))),
            'mean_W_additive': float(final.mean()),
            'expected_W_additive': float(pair.h_at(x0)) * float(np.exp(-sol.w * options['t'])),
        }
        if options['genealogy']:
            written, masses = self._dump_genealogies(
                result.system, options['genealogy'], options['N'], options['gamma'])
            summary['genealogy_files'] = written
            summary['genealogy_mean_mass'] = float(np.mean(masses)) if masses else 0.0
        return frame, summary

    def _dump_genealogies(self, system, directory, N, gamma):
        folder = Path(directory)
        folder.mkdir(parents=True, exist_ok=True)
        written = 0
        masses = []
        for replicate in range(system.n_replicates):
            if system.members(replicate).size == 0:
                continue
            sample = mmm_sample(system, replicate, N=N, gamma=gamma)
            write_matrix_csv(sample.matrix, folder / f'replicate_{replicate:05d}.csv')
            masses.append(float(sample.weights.sum()))
            written += 1
        return written, masses

    # ========== Reversed ==========

    def _reversed(self, potential, rng, options):
        rq = reversed_quantities(potential)
        outcome = run_reversed(rq, options['z0'], options['t'], rng,
                               n_replicates=options['replicates'], every=options['every'], dt=options['dt'],
                               bridge=options['bridge'])
        summary = {
            'mode': 'reversed',
            'potential': potential.to_dict(),
            'z0': options['z0'],
            't': options['t'],
            'replicates': options['replicates'],
            'seed': options['seed'],
            'mu': rq.mu,
            'beta': rq.beta,
            'alpha': rq.alpha,
            'mean_W_reversed': float(outcome.W[-1].mean()),
            'h_reversed': float(rq.h(options['z0'])),
            'pruned_mass': float(outcome.pruned_mass.mean()),
        }
        return outcome.frame(), summary

    # ========== Diagnostics ==========

    def _escape(self, potential, rng, options):
        rq = reversed_quantities(potential)
        trend = reversed_escape(rq, options['lengths'], options['c'], options['replicates'], rng,
                                delta1=options['delta1'], dt=options['dt'])
        summary = {
            'mode': 'escape',
            'potential': potential.to_dict(),
            'c': options['c'],
            'delta1': options['delta1'],
            'replicates': options['replicates'],
            'seed': options['seed'],
            'decreasing': trend.decreasing,
        }
        return trend.frame, summary

    def _equilibrium(self, potential, rng, options):
        L = options['L']
        x0 = options['x0'] if options['x0'] is not None else L / 2.0
        sol = solve_slp(potential, L)
        config = BBMConfig.forward(potential, sol.mu, L, options['dt'], bridge=options['bridge'])
        frame = equilibrium_ks(config, harmonic_pair(sol), x0, options['times'], options['replicates'], rng)
        summary = {
            'mode': 'equilibrium',
            'potential': potential.to_dict(),
            'L': L,
            'x0': x0,
            'replicates': options['replicates'],
            'seed': options['seed'],
            'decreasing': bool(np.all(np.diff(frame['ks'].to_numpy()) < 0)),
        }
        return frame, summary
