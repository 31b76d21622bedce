"""
Management Command لقياسات العمود الفقري: الخلط، k-spine، وعزوم القفز
BRLab - Branching Genealogy Laboratory

الاستخدام:
    python manage.py spine mix --potential step:4 --L 6 --x0 1 --times 0.5 1 2 4 --n 5000
    python manage.py spine kspine --L 4 --x0 2 --k 2 --t 1 --n 2000
    python manage.py spine kspine --potential step:4 --reversed --z 1 --k 2 --n 500
    python manage.py spine jump-moments --potential step:4 --k 2 3 --A 1 --lengths 6 8 10 --n 400
    python manage.py spine endpoint --potential step:3 --lengths 5 6 --t 0.5 --n 10000 --dt 0.01
"""

import json

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import LabError
from apps.core.rng import stream
from apps.spectral.potentials import Potential
from apps.spectral.services import reversed_quantities, solve_slp
from apps.spine.kspine import jump_moment, k_spine, k_spine_reversed, recursion_endpoint
from apps.spine.services import DEFAULT_DT, SpineConfig, mixing_diagnostics


class Command(BaseCommand):
    help = 'تشخيصات خلط العمود الفقري وتقديرات k-spine وعزوم القفز المقيّسة'

    def add_arguments(self, parser):
        parser.add_argument('action', choices=['mix', 'kspine', 'jump-moments', 'endpoint'])
        parser.add_argument('--potential', default='zero', help='zero | step:B[:edge] | file:path.csv')
        parser.add_argument('--L', type=float, default=5.0, help='طول المجال')
        parser.add_argument('--x0', type=float, default=None, help='نقطة البداية (افتراضياً L/2)')
        parser.add_argument('--t', type=float, default=1.0, help='الأفق')
        parser.add_argument('--times', nargs='*', type=float, default=[0.25, 0.5, 1.0, 2.0, 4.0])
        parser.add_argument('--k', nargs='*', type=int, default=[2], help='عدد الأعمدة')
        parser.add_argument('--n', type=int, default=1000, help='الميزانية في المستوى الأعلى')
        parser.add_argument('--dt', type=float, default=DEFAULT_DT)
        parser.add_argument('--reversed', action='store_true', help='العمود المعكوس على (0, ∞)')
        parser.add_argument('--z', type=float, default=1.0, help='بداية العمود المعكوس')
        parser.add_argument('--horizon', type=float, default=None, help='أفق محاكاة W← (افتراضياً 20/β)')
        parser.add_argument('--A', type=float, default=1.0)
        parser.add_argument('--lengths', nargs='*', type=float, default=[6.0, 8.0, 10.0])
        parser.add_argument('--delta1', nargs='*', type=float, default=[0.2, 0.3],
                            help='قيم δ₁ لأفق ε = (1−δ₁)L/β (حساسية ε)')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--output', default=None, help='ملف CSV (وإلا الإخراج القياسي)')

    def handle(self, *args, **options):
        try:
            potential = Potential.from_spec(options['potential'])
            action = options['action']
            if action == 'mix':
                self._emit(self._mix(potential, options), options['output'])
            elif action == 'kspine':
                self.stdout.write(json.dumps(self._kspine(potential, options), indent=2, sort_keys=True))
            elif action == 'endpoint':
                self._emit(self._endpoint(potential, options), options['output'])
            else:
                self._emit(self._jump(potential, options), options['output'])
        except LabError as exc:
            raise CommandError(str(exc)) from exc

    # ========== Actions ==========

    def _start(self, options):
        L = options['L']
        return options['x0'] if options['x0'] is not None else L / 2.0

    def _mix(self, potential, options):
        sol = solve_slp(potential, options['L'])
        cfg = SpineConfig.forward(sol, options['dt'])
        return mixing_diagnostics(cfg, self._start(options), options['times'], options['n'],
                                  stream(options['seed'], 'spine-mix'))

    def _kspine(self, potential, options):
        rng = stream(options['seed'], 'spine-kspine')
        if options['reversed']:
            rq = reversed_quantities(potential)
            results = [
                k_spine_reversed(rq, options['z'], k, options['n'], rng, horizon=options['horizon'],
                                 dt=options['dt']).to_dict()
                for k in options['k']
            ]
            return {'mode': 'reversed', 'potential': potential.to_dict(), 'seed': options['seed'], 'results': results}
        sol = solve_slp(potential, options['L'])
        cfg = SpineConfig.forward(sol, options['dt'])
        x0 = self._start(options)
        results = [k_spine(cfg, x0, k, options['t'], n=options['n'], rng=rng).to_dict() for k in options['k']]
        return {
            'mode': 'forward', 'potential': potential.to_dict(), 'L': options['L'], 'x0': x0,
            'w': sol.w, 'seed': options['seed'], 'results': results,
        }

    def _jump(self, potential, options):
        # one stream per δ₁ so adding a value leaves the other rows unchanged
        frames = [
            jump_moment(potential, options['k'], options['A'], options['lengths'], options['n'],
                        stream(options['seed'], 'spine-jump', index), delta1=delta1, dt=options['dt']).frame
            for index, delta1 in enumerate(options['delta1'])
        ]
        return pd.concat(frames, ignore_index=True)

    def _endpoint(self, potential, options):
        rows = [
            recursion_endpoint(potential, options['A'], L, options['t'], options['n'],
                               stream(options['seed'], 'spine-endpoint', index), dt=options['dt']).to_dict()
            for index, L in enumerate(options['lengths'])
        ]
        return pd.DataFrame(rows)

    def _emit(self, frame: pd.DataFrame, output):
        if output:
            frame.to_csv(output, index=False)
            self.stdout.write(self.style.SUCCESS(f'✓ تمت كتابة {len(frame)} صف إلى {output}'))
        else:
            self.stdout.write(frame.to_csv(index=False))
