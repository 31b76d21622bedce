"""
Management Command لعمليات CSBP: العزوم، المحاكاة، وفحص قانون الدخول
BRLab - Branching Genealogy Laboratory

الاستخدام:
    python manage.py csbp moments --mechanism feller:1 --k 2 --t 1
    python manage.py csbp simulate --mechanism stable:1:1.5 --n 1000 --s 0.25 0.5 --output z.csv
    python manage.py csbp entrance-check --mechanism feller:1 --theta 0.5 1 2
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import LabError
from apps.core.rng import stream
from apps.csbp.mechanisms import BranchingMechanism
from apps.csbp.moments import csbp_moments
from apps.csbp.reduced import entrance_law_check, simulate_forest
from apps.csbp.services import LaplaceFlow, ReducedRates
from apps.ultrametric.functionals import Constant, load_functional


class Command(BaseCommand):
    help = 'حساب عزوم ψ-mm ومحاكاة العملية المختزلة وفحص قانون الدخول'

    def add_arguments(self, parser):
        parser.add_argument('action', choices=['moments', 'simulate', 'entrance-check'])
        parser.add_argument('--mechanism', default='feller:1', help='feller:d[:b] | stable:C:alpha | cutoff:A:alpha[:d[:b]] | linear:b')
        parser.add_argument('--t', type=float, default=1.0, help='الأفق')
        parser.add_argument('--k', type=int, default=2, help='حجم المصفوفة')
        parser.add_argument('--functional', default=None, help='JSON الدالة المنتجية أو @مسار (افتراضياً الثابت 1)')
        parser.add_argument('--n', type=int, default=10000, help='عدد الأشجار أو العينات')
        parser.add_argument('--s', nargs='*', type=float, default=[0.5], help='أزمنة الاستعلام')
        parser.add_argument('--theta', nargs='*', type=float, default=[0.5, 1.0, 2.0])
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--output', default=None, help='ملف CSV (وإلا الإخراج القياسي)')

    def handle(self, *args, **options):
        try:
            mech = BranchingMechanism.from_spec(options['mechanism'])
            action = options['action']
            if action == 'moments':
                self._moments(mech, options)
            elif action == 'simulate':
                self._emit(self._simulate(mech, options), options['output'])
            else:
                self._emit(self._entrance(mech, options), options['output'])
        except LabError as exc:
            raise CommandError(str(exc)) from exc

    # ========== Actions ==========

    def _moments(self, mech, options):
        text = options['functional']
        if text is None:
            G = Constant()
        else:
            G = load_functional(Path(text[1:]).read_text(encoding='utf-8') if text.startswith('@') else text)
        value = csbp_moments(mech, options['k'], options['t'], G)
        report = {
            'mechanism': mech.to_dict(),
            'k': options['k'],
            't': options['t'],
            'functional': G.to_dict(),
            'value': value,
        }
        self.stdout.write(json.dumps(report, indent=2, sort_keys=True))

    def _simulate(self, mech, options):
        t = options['t']
        rates = ReducedRates(LaplaceFlow(mech), t)
        forest = simulate_forest(rates, options['n'], stream(options['seed'], 'csbp-simulate'), t=t)
        frames = []
        for s in options['s']:
            frames.append(pd.DataFrame({
                'tree': np.arange(forest.n),
                's': s,
                'Z': forest.population(s),
                'W': forest.martingale(s),
            }))
        return pd.concat(frames, ignore_index=True)

    def _entrance(self, mech, options):
        t = options['t']
        flow = LaplaceFlow(mech)
        rates = ReducedRates(flow, t)
        rows = []
        for i, theta in enumerate(options['theta']):
            check = entrance_law_check(
                mech, t, theta, options['n'], stream(options['seed'], 'csbp-entrance', i), flow=flow, rates=rates,
            )
            rows.append({
                'theta': theta, 'lhs': check.lhs.value, 'lhs_stderr': check.lhs.stderr,
                'probe_rhs': check.probe_rhs, 'probe_z': check.probe_z,
                'conditional': check.conditional.value, 'conditional_stderr': check.conditional.stderr,
                'rhs': check.rhs, 'z': check.z,
            })
        return pd.DataFrame(rows)

    def _emit(self, frame: pd.DataFrame, output):
        if output:
            frame.to_csv(output, index=False)
            self.stdout.write(self.style.SUCCESS(f'✓ تمت كتابة {len(frame)} صف إلى {output}'))
        else:
            self.stdout.write(frame.to_csv(index=False))
