"""
Service Layer لتدفق أس لابلاس ومعدلات العملية المختزلة
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. LaplaceFlow: حل ∂_t u_t(θ) = −ψ(u_t(θ)) والحد ū_t = lim_{θ→∞} u_t(θ)
2. ReducedRates: المعدل الكلي r_τ، m_τ، العزوم العاملية وقانون عدد الأبناء K_τ
3. التعويض e^{−∫m} وأخذ عينات أعمار العقد بعكس دالة الخطر التراكمية
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .exceptions import CSBPError, NoExtinctionError, TruncationError
from .mechanisms import BranchingMechanism, grey_check

logger = logging.getLogger('csbp')

# ========== Constants ==========
THETA_START = 1e2
THETA_CAP = 1e30
UBAR_RTOL = 1e-9
GRID_POINTS = 1024
GRID_FLOOR = 1e-6
K_MAX_START = 64
K_MAX_LIMIT = 4096
TAIL_TOLERANCE = 1e-8
STABLE_TABLE = 4096


# ========== Laplace flow ==========

class LaplaceFlow:
    """
    تدفق أس لابلاس لآلية ψ.

    المعادلة تُكامَل على المقلوب z = 1/u: ∂_t z = z²ψ(1/z)، وهي غير متصلبة
    عند θ كبيرة لآليات Grey (بالنسبة لـ Feller: ∂_t z = d/2).
    """

    def __init__(self, mech: BranchingMechanism, rtol: float = 1e-10):
        self.mech = mech
        self.rtol = rtol
        self.grey = grey_check(mech)
        self._ubar_cache: Dict[float, float] = {}

    def _rhs(self, _t, z):
        z = np.maximum(z, 1e-300)
        return z * z * self.mech.psi(1.0 / z)

    def _integrate(self, z0: float, times: np.ndarray, start: float = 0.0) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if times.size == 0:
            return times
        end = float(times.max())
        if end <= start:
            return np.full_like(times, z0)
        solution = integrate.solve_ivp(
            self._rhs, (start, end), [z0],
            method='LSODA', t_eval=np.unique(times), rtol=self.rtol, atol=z0 * self.rtol * 1e-6,
        )
        if not solution.success:
            raise CSBPError(f'Laplace flow integration failed: {solution.message}')
        return np.interp(times, solution.t, solution.y[0])

    def u(self, theta: float, t):
        """u_t(θ) لقيمة θ واحدة وزمن أو مصفوفة أزمنة."""
        theta = float(theta)
        if theta < 0:
            raise CSBPError('theta must be non-negative', theta=theta)
        times = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(times < 0):
            raise CSBPError('t must be non-negative')
        if theta == 0.0:
            values = np.zeros_like(times)
        else:
            values = 1.0 / self._integrate(1.0 / theta, times)
            values[times == 0] = theta
        return values if np.ndim(t) else float(values[0])

    def ubar(self, t: float) -> float:
        """
        ū_t بزيادة θ ∈ {10², 10³, …} حتى يتقارب u_t(θ) بدقة نسبية 1e−9.

        Raises:
            NoExtinctionError: إذا فشل شرط Grey
        """
        if not self.grey.holds:
            raise NoExtinctionError('Grey condition fails; u_bar is infinite', mechanism=self.mech.label())
        if t <= 0:
            raise CSBPError('u_bar needs t > 0', t=t)
        if t in self._ubar_cache:
            return self._ubar_cache[t]
        theta = THETA_START
        previous = self.u(theta, t)
        value = None
        while theta < THETA_CAP:
            theta *= 10.0
            current = self.u(theta, t)
            if abs(current - previous) < UBAR_RTOL * previous:
                value = current
                break
            previous = current
        if value is None:
            logger.warning(f'u_bar iteration did not settle by theta={THETA_CAP:g}; using the integral form')
            value = self._ubar_from_integral(t)
        logger.debug(f'u_bar({t:g}) = {value:.12g} at theta={theta:g}')
        self._ubar_cache[t] = value
        return value

    def _ubar_from_integral(self, t: float) -> float:
        """حل ∫_{ū}^∞ dv/ψ(v) = t."""
        def remaining(log_u):
            lower = math.exp(log_u)
            value, _ = integrate.quad(lambda v: 1.0 / float(self.mech.psi(v)), lower, np.inf, limit=400)
            return value - t
        lo, hi = math.log(max(self.grey.theta0, 1e-12) * 1.0001 + 1e-12), math.log(THETA_CAP)
        return math.exp(optimize.brentq(remaining, lo, hi, xtol=1e-14))

    def ubar_grid(self, taus) -> np.ndarray:
        """ū على شبكة τ: θ-تكرار عند أصغر τ ثم تكامل ∂_τ ū = −ψ(ū) للأمام."""
        taus = np.asarray(taus, dtype=float)
        first = float(taus.min())
        z0 = 1.0 / self.ubar(first)
        return 1.0 / self._integrate(z0, taus, start=first)


def laplace_exponent(flow: LaplaceFlow, theta: float, t):
    return flow.u(theta, t)


def grey_ubar(flow: LaplaceFlow, t: float) -> float:
    return flow.ubar(t)


# ========== Offspring law ==========

@dataclass(frozen=True)
class OffspringLaw:
    """قانون K_τ على {2..K_max} مع كتلة الذيل المقطوعة."""
    tau: float
    ks: np.ndarray
    probabilities: np.ndarray
    tail: float

    def factorial_moment(self, k: int) -> float:
        falling = np.ones_like(self.ks, dtype=float)
        for j in range(k):
            falling *= self.ks - j
        return float(np.dot(falling, self.probabilities))


class ReducedRates:
    """
    معدلات العملية المختزلة بأفق t:
        r_τ = ψ′(ū_τ) − ψ(ū_τ)/ū_τ
        m_τ = ψ(ū_τ)/ū_τ − b
        r_τE[K_τ^{(k)}] = ū_τ^{k−1}(1_{k=2}d + ∫x^kΛ)
    """

    def __init__(self, flow: LaplaceFlow, t: float):
        if t <= 0:
            raise CSBPError('Horizon must be positive', t=t)
        self.flow = flow
        self.mech = flow.mech
        self.t = float(t)
        self.taus = np.geomspace(self.t * GRID_FLOOR, self.t, GRID_POINTS)
        self.ubar_values = flow.ubar_grid(self.taus)
        self._log_ubar = CubicSpline(np.log(self.taus), np.log(self.ubar_values), extrapolate=True)
        self._tables: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    # ----- accessors -----

    def ubar(self, tau):
        return np.exp(self._log_ubar(np.log(np.asarray(tau, dtype=float))))

    def total_rate(self, tau):
        u = self.ubar(tau)
        return self.mech.dpsi(u) - self.mech.psi(u) / u

    def m(self, tau):
        u = self.ubar(tau)
        return self.mech.psi(u) / u - self.mech.b

    def factorial_moment_rate(self, k: int, tau) -> np.ndarray:
        """r_τE[K_τ^{(k)}]."""
        return self.ubar(tau) ** (k - 1) * self.mech.moment_coefficient(k)

    def compensation(self, s: float) -> float:
        """e^{−∫₀ˢ m_{t−x}dx} بالتكامل العددي."""
        if not 0 <= s < self.t:
            raise CSBPError('Compensation needs 0 <= s < t', s=s, t=self.t)
        if s == 0:
            return 1.0
        value, _ = integrate.quad(lambda tau: float(self.m(tau)), self.t - s, self.t, epsrel=1e-11, limit=200)
        return math.exp(-value)

    def compensation_closed_form(self, s: float) -> float:
        """(ū_t/ū_{t−s})e^{sb}."""
        return float(self.ubar(self.t) / self.ubar(self.t - s)) * math.exp(s * self.mech.b)

    # ----- lifetimes -----

    @cached_property
    def _cumulative_hazard(self) -> np.ndarray:
        rate = self.total_rate(self.taus)
        return integrate.cumulative_trapezoid(rate * self.taus, np.log(self.taus), initial=0.0)

    def sample_death(self, tau0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """
        الزمن المتبقي τ_d عند موت العقدة التي تولد والزمن المتبقي τ₀.

        P(العيش حتى τ) = exp(−∫_τ^{τ₀} r_u du)؛ القيمة 0 تعني البقاء حتى الأفق.
        """
        hazard = self._cumulative_hazard
        log_taus = np.log(self.taus)
        start = np.interp(np.log(tau0), log_taus, hazard)
        target = start - rng.exponential(size=np.shape(tau0))
        tau_d = np.exp(np.interp(target, hazard, log_taus))
        return np.where(target <= hazard[0], 0.0, np.minimum(tau_d, tau0))

    # ----- offspring -----

    def _jump_table(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """جدول احتمالات K من جزء القفز عند عقدة الشبكة index (قفز بعزوم منتهية)."""
        if index in self._tables:
            return self._tables[index]
        u = float(self.ubar_values[index])
        total = float(self.total_rate(self.taus[index]))
        jump_total = float(self.mech.jump_rate(u))
        k_max = K_MAX_START
        while True:
            rates = self.mech.jump.offspring_rates(u, k_max)
            tail = max(jump_total - float(rates.sum()), 0.0) / total
            if tail <= TAIL_TOLERANCE or k_max >= K_MAX_LIMIT:
                break
            k_max *= 2
        if tail > TAIL_TOLERANCE:
            raise TruncationError('Offspring law keeps too much mass beyond K_max', tail=tail, k_max=k_max)
        if tail > 0.1 * TAIL_TOLERANCE:
            logger.warning(f'Offspring tail {tail:.2e} close to the limit at tau={self.taus[index]:.4g}')
        table = (np.arange(2, k_max + 1), np.cumsum(rates) / rates.sum())
        self._tables[index] = table
        return table

    @cached_property
    def _stable_table(self) -> Tuple[np.ndarray, float]:
        probs = self.mech.jump.offspring_probabilities(STABLE_TABLE)
        return np.cumsum(probs), 1.0 - float(probs.sum())

    def _sample_stable(self, count: int, rng: np.random.Generator) -> np.ndarray:
        cumulative, tail = self._stable_table
        u = rng.random(count)
        ks = 2 + np.searchsorted(cumulative, u, side='right')
        in_tail = u >= 1.0 - tail
        if np.any(in_tail):
            # the law decays like i^{-1-alpha}; beyond the table K is drawn from the Pareto tail
            pareto = rng.random(int(in_tail.sum())) ** (-1.0 / self.mech.jump.alpha)
            ks[in_tail] = np.minimum(np.ceil((STABLE_TABLE + 1) * pareto), 1e15).astype(np.int64)
        return ks

    def _sample_moment_jump(self, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        log_taus = np.log(self.taus)
        position = np.interp(np.log(tau), log_taus, np.arange(self.taus.size))
        lower = np.floor(position).astype(int)
        index = np.minimum(lower + (rng.random(tau.size) < position - lower), self.taus.size - 1)
        ks = np.empty(tau.size, dtype=int)
        for j in np.unique(index):
            chosen = np.flatnonzero(index == j)
            values, cumulative = self._jump_table(int(j))
            picks = np.searchsorted(cumulative, rng.random(chosen.size), side='right')
            ks[chosen] = values[np.minimum(picks, values.size - 1)]
        return ks

    def sample_offspring(self, tau, rng: np.random.Generator) -> np.ndarray:
        """عينات K_τ لمصفوفة أزمنة متبقية τ."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        ks = np.full(tau.size, 2, dtype=int)
        if self.mech.jump is None or tau.size == 0:
            return ks
        u = self.ubar(tau)
        diffusive = 0.5 * self.mech.d * u
        jump = self.mech.jump_rate(u)
        from_jump = rng.random(tau.size) * (diffusive + jump) < jump
        if np.any(from_jump):
            if self.mech.is_stable:
                ks[from_jump] = self._sample_stable(int(from_jump.sum()), rng)
            else:
                ks[from_jump] = self._sample_moment_jump(tau[from_jump], rng)
        return ks

    def offspring_law(self, tau: float, k_max: int = K_MAX_START) -> OffspringLaw:
        """
        القانون الدقيق r_{i,τ}/r_τ مع r_{i,τ} = ū^{i−1}/i!·(1_{i=2}d + ∫x^i e^{−ūx}Λ(dx)).
        """
        u = float(self.ubar(tau))
        total = float(self.total_rate(tau))
        ks = np.arange(2, k_max + 1)
        rates = np.zeros(ks.size)
        rates[0] = 0.5 * self.mech.d * u
        if self.mech.is_stable:
            rates += float(self.mech.jump_rate(u)) * self.mech.jump.offspring_probabilities(ks.size)
        elif self.mech.jump is not None:
            rates += self.mech.jump.offspring_rates(u, k_max)
        probabilities = rates / total
        return OffspringLaw(float(tau), ks, probabilities, max(1.0 - float(probabilities.sum()), 0.0))


def reduced_rates(flow: LaplaceFlow, t: float) -> ReducedRates:
    return ReducedRates(flow, t)
