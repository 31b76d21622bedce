"""
اتجاه ذيل الحجم: P_x(Z̄_t > z₀) مقابل N
BRLab - Branching Genealogy Laboratory

Z̄_t = Z_{tN}/N^γ لـ BBM على [0, L_{N,A}] من جسيم واحد عند x0.
انحدار log P على log N يُقارن بـ −γ = −1/(α−1) بتسامح واسع (اتجاه وليس نهاية).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from apps.bbm.services import BBMConfig, run
from apps.core.rng import chunk_sizes, stream
from apps.spectral.exceptions import RegimeError
from apps.spectral.potentials import Potential
from apps.spectral.services import LimitSolution, Regime, cutoff_geometry, limit_solution

from .exceptions import ValidationError
from .services import Scheduler

logger = logging.getLogger('harness')

MIN_HITS = 10
TREND_TOLERANCE = 0.25


@dataclass(frozen=True)
class TailTrend:
    frame: pd.DataFrame
    level: float
    slope: float
    slope_stderr: float
    alpha: float
    tail_slope: float
    insufficient: bool

    @property
    def gamma(self) -> float:
        return 1.0 / (self.alpha - 1.0)

    @property
    def expected_slope(self) -> float:
        return -self.gamma

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.expected_slope) / self.gamma

    def within(self, tolerance: float = TREND_TOLERANCE) -> bool:
        return not self.insufficient and self.relative_error <= tolerance

    @property
    def monotone_in_level(self) -> bool:
        """P يتناقص في z₀ عند كل N."""
        for _, rows in self.frame.groupby('N'):
            p = rows.sort_values('z0')['probability'].to_numpy()
            if np.any(np.diff(p) > 0):
                return False
        return True


def _rank_size_slope(values: np.ndarray) -> float:
    """ميل log(رتبة/n) على log(قيمة) في المدى الأوسط للقيم الموجبة."""
    positive = np.sort(values[values > 0])[::-1]
    if positive.size < 20:
        return math.nan
    ranks = np.arange(1, positive.size + 1) / positive.size
    lo, hi = int(0.1 * positive.size), int(0.9 * positive.size)
    fit = stats.linregress(np.log(positive[lo:hi]), np.log(ranks[lo:hi]))
    return float(fit.slope)


def _tail_chunk(config: BBMConfig, x0: float, horizon: float, steps: int, limit: LimitSolution,
                size: int, seed: int, key: str, index: int) -> Tuple[np.ndarray, np.ndarray]:
    result = run(config, x0, horizon, stream(seed, key, index),
                 observables={'H': limit.h_at}, n_replicates=size, every=steps)
    return result.final('Z'), result.final('H')


def size_tail_trend(potential: Potential, N_grid: Sequence[float], A: float, t: float, x0: float,
                    replicates: int, scheduler: Scheduler, seed: int, key: str = 'size-tail-trend',
                    levels: Sequence[float] = (0.01, 0.02, 0.05), delta1: float = 0.2,
                    dt: Optional[float] = None) -> TailTrend:
    """
    تقدير P_x(Z̄_t > z₀) لكل N و z₀، وانحدار log P على log N عند أصغر z₀.

    كل (N، دفعة) مهمة مستقلة على المجدول بتيار (seed, key/N, index).

    Raises:
        RegimeError: خارج النظام شبه المدفوع
        ValidationError: أقل من 3 قيم لـ N
    """
    if len(N_grid) < 3:
        raise ValidationError('Need at least three values of N', N_grid=list(N_grid))
    if not levels:
        raise ValidationError('Need at least one level z0')
    limit = limit_solution(potential)
    if limit.regime is not Regime.SEMI_PUSHED:
        raise RegimeError('Size-tail trend needs the semi-pushed regime', regime=limit.regime.value)
    gamma = 1.0 / (limit.alpha - 1.0)
    levels = sorted(float(z) for z in levels)
    grid = sorted(float(n) for n in N_grid)
    settings_by_N, points, owners = {}, [], []
    for N in grid:
        L = cutoff_geometry(limit.mu, limit.beta, N, A, delta1).L_NA
        config = BBMConfig.forward(potential, limit.mu, L, dt)
        horizon = t * N
        steps, _ = config.schedule(horizon)
        settings_by_N[N] = (L, horizon)
        for index, size in enumerate(chunk_sizes(replicates, scheduler.chunk)):
            points.append((config, min(x0, 0.5 * L), horizon, steps, limit, size, seed, f'{key}/N={N:g}', index))
            owners.append(N)
    results = scheduler.grid(_tail_chunk, points)

    rows, tail_masses = [], np.empty(0)
    for N in grid:
        L, horizon = settings_by_N[N]
        mine = [result for owner, result in zip(owners, results) if owner == N]
        scale = N ** gamma
        Z_bar = np.concatenate([Z for Z, _ in mine]) / scale
        tail_masses = np.concatenate([H for _, H in mine]) / scale
        for z0 in levels:
            hits = Z_bar > z0
            p = float(hits.mean())
            rows.append({
                'N': N, 'L': L, 'horizon': horizon, 'z0': z0, 'probability': p,
                'stderr': math.sqrt(p * (1.0 - p) / Z_bar.size), 'hits': int(hits.sum()), 'replicates': int(Z_bar.size),
            })
        logger.info(f'Size tail at N={N:g} (L={L:.3f}, horizon={horizon:g}): {int((Z_bar > levels[0]).sum())} hits')
    frame = pd.DataFrame(rows)
    base = frame[frame['z0'] == levels[0]]
    usable = base[base['hits'] > 0]
    insufficient = bool((base['hits'] < MIN_HITS).any()) or len(usable) < 2
    if insufficient:
        logger.warning(f'Size-tail trend has insufficient statistics: hits={base["hits"].tolist()}')
    if len(usable) >= 2:
        fit = stats.linregress(np.log(usable['N'].to_numpy()), np.log(usable['probability'].to_numpy()))
        slope, slope_se = float(fit.slope), float(fit.stderr)
    else:
        slope, slope_se = math.nan, math.nan
    trend = TailTrend(frame, levels[0], slope, slope_se, limit.alpha, _rank_size_slope(tail_masses), insufficient)
    logger.info(f'Size-tail slope {trend.slope:.3f} against {trend.expected_slope:.3f}')
    return trend
