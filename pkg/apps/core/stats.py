"""
تقديرات مونت كارلو ودمجها
BRLab - Branching Genealogy Laboratory
"""

import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

Number = Union[int, float]


@dataclass(frozen=True)
class Estimate:
    """تقدير مع الخطأ المعياري وعدد العينات (n=0 للقيم الحتمية)."""
    value: float
    stderr: float = 0.0
    n: int = 0

    @classmethod
    def exact(cls, value: Number) -> 'Estimate':
        return cls(float(value), 0.0, 0)

    @classmethod
    def from_samples(cls, samples: Iterable[Number]) -> 'Estimate':
        data = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=float)
        n = int(data.size)
        if n == 0:
            return cls(math.nan, math.inf, 0)
        if n == 1:
            return cls(float(data[0]), math.inf, 1)
        return cls(float(data.mean()), float(data.std(ddof=1) / math.sqrt(n)), n)

    @property
    def is_exact(self) -> bool:
        return self.stderr == 0.0

    def scaled(self, factor: float) -> 'Estimate':
        return Estimate(self.value * factor, abs(factor) * self.stderr, self.n)

    def z_against(self, other: Union['Estimate', Number]) -> float:
        if not isinstance(other, Estimate):
            other = Estimate.exact(other)
        return z_score(self.value, self.stderr, other.value, other.stderr)

    def to_dict(self) -> dict:
        return {'value': self.value, 'stderr': self.stderr, 'n': self.n}


def z_score(lhs: float, lhs_se: float, rhs: float, rhs_se: float) -> float:
    """الانحراف المعياري المُطبَّع بين طرفين مستقلين."""
    scale = math.hypot(lhs_se, rhs_se)
    diff = lhs - rhs
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / scale


def merge(estimates: Iterable[Estimate]) -> Estimate:
    """
    دمج تقديرات مستقلة لنفس الكمية بمتوسط موزون بعدد العينات.

    التباين يُنشر كـ Σ(n_i/N)²·se_i².
    """
    items = [e for e in estimates if e.n > 0]
    if not items:
        return Estimate(math.nan, math.inf, 0)
    total = sum(e.n for e in items)
    value = sum(e.n * e.value for e in items) / total
    variance = sum((e.n / total) ** 2 * e.stderr ** 2 for e in items)
    return Estimate(value, math.sqrt(variance), total)


def ratio(numerator: Estimate, denominator: Estimate) -> Estimate:
    """نسبة تقديرين مستقلين بتقريب دلتا من الرتبة الأولى."""
    value = numerator.value / denominator.value
    rel = math.hypot(
        numerator.stderr / numerator.value if numerator.value else 0.0,
        denominator.stderr / denominator.value if denominator.value else 0.0,
    )
    return Estimate(value, abs(value) * rel, min(numerator.n, denominator.n) or max(numerator.n, denominator.n))
