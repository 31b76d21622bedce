"""
الجهود W ومعدل التفرع
BRLab - Branching Genealogy Laboratory

الجهد غير سالب ومحمول على [0,1]، بثلاثة أنواع:
- Zero: جهد معدوم
- Step: ارتفاع B على [0, edge]
- Tabulated: قيم مجدولة (x, W) مع استيفاء خطي
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from .exceptions import PotentialError


class PotentialKind(Enum):
    """أنواع الجهود المدعومة."""
    ZERO = 'zero'
    STEP = 'step'
    TABULATED = 'tabulated'


@dataclass(frozen=True)
class Potential:
    """جهد W ≥ 0 محمول على [0,1]."""
    kind: PotentialKind
    height: float = 0.0
    edge: float = 1.0
    xs: Tuple[float, ...] = field(default=())
    ws: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind is PotentialKind.STEP:
            if self.height < 0:
                raise PotentialError('Step height must be non-negative', height=self.height)
            if not 0.0 < self.edge <= 1.0:
                raise PotentialError('Step edge must lie in (0, 1]', edge=self.edge)
        elif self.kind is PotentialKind.TABULATED:
            xs = np.asarray(self.xs, dtype=float)
            ws = np.asarray(self.ws, dtype=float)
            if xs.size < 2 or xs.size != ws.size:
                raise PotentialError('Tabulated potential needs matching x and W columns of length >= 2')
            if np.any(np.diff(xs) <= 0):
                raise PotentialError('Tabulated grid must be strictly increasing')
            if xs[0] < 0 or xs[-1] > 1:
                raise PotentialError('Tabulated grid must lie in [0, 1]', first=float(xs[0]), last=float(xs[-1]))
            if np.any(ws < 0):
                raise PotentialError('Tabulated values must be non-negative')

    # ========== Constructors ==========

    @classmethod
    def zero(cls) -> 'Potential':
        return cls(PotentialKind.ZERO, edge=0.0)

    @classmethod
    def step(cls, height: float, edge: float = 1.0) -> 'Potential':
        return cls(PotentialKind.STEP, height=float(height), edge=float(edge))

    @classmethod
    def tabulated(cls, xs: Sequence[float], ws: Sequence[float]) -> 'Potential':
        return cls(
            PotentialKind.TABULATED,
            xs=tuple(float(x) for x in xs),
            ws=tuple(float(w) for w in ws),
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> 'Potential':
        """قراءة ملف CSV بعمودين x,W (سطر العنوان اختياري)."""
        xs, ws = [], []
        with open(path, newline='', encoding='utf-8') as handle:
            for row in csv.reader(handle):
                if not row or row[0].strip().lower() in ('x', '#x'):
                    continue
                xs.append(float(row[0]))
                ws.append(float(row[1]))
        return cls.tabulated(xs, ws)

    @classmethod
    def from_spec(cls, text: str) -> 'Potential':
        """
        تحليل وصف نصي للجهد.

        Example:
            'zero', 'step:4', 'step:3:0.5', 'file:potential.csv'
        """
        head, _, rest = text.strip().partition(':')
        head = head.lower()
        if head == 'zero':
            return cls.zero()
        if head == 'step':
            parts = [p for p in rest.split(':') if p]
            if not parts:
                raise PotentialError('step potential needs a height', spec=text)
            edge = float(parts[1]) if len(parts) > 1 else 1.0
            return cls.step(float(parts[0]), edge)
        if head == 'file':
            return cls.from_csv(rest)
        raise PotentialError('Unknown potential specification', spec=text)

    # ========== Evaluation ==========

    @property
    def support_edge(self) -> float:
        """الطرف الأيمن a للحامل: W = 0 على (a, ∞)."""
        if self.kind is PotentialKind.ZERO:
            return 0.0
        if self.kind is PotentialKind.STEP:
            return self.edge
        return self.xs[-1]

    @property
    def max_value(self) -> float:
        if self.kind is PotentialKind.ZERO:
            return 0.0
        if self.kind is PotentialKind.STEP:
            return self.height
        return max(self.ws)

    @property
    def discontinuities(self) -> Tuple[float, ...]:
        if self.kind is PotentialKind.STEP and self.height > 0:
            return (self.edge,)
        return ()

    def __call__(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind is PotentialKind.ZERO:
            return np.zeros_like(x)
        if self.kind is PotentialKind.STEP:
            return np.where((x >= 0) & (x <= self.edge), self.height, 0.0)
        return np.interp(x, self.xs, self.ws, left=0.0, right=0.0)

    def rate(self, x: Any) -> np.ndarray:
        """معدل التفرع r(x) = ½W(x) + ½."""
        return 0.5 * self(x) + 0.5

    @property
    def rate_bound(self) -> float:
        return 0.5 * (1.0 + self.max_value)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind.value}
        if self.kind is PotentialKind.STEP:
            data.update(height=self.height, edge=self.edge)
        elif self.kind is PotentialKind.TABULATED:
            data.update(xs=list(self.xs), ws=list(self.ws))
        return data

    def __str__(self) -> str:
        if self.kind is PotentialKind.STEP:
            return f'step(B={self.height:g}, edge={self.edge:g})'
        if self.kind is PotentialKind.TABULATED:
            return f'tabulated({len(self.xs)} points)'
        return 'zero'
