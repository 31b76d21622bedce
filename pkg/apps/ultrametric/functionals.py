"""
الدوال المنتجية (product functionals) على المصفوفات فوق المترية المعلّمة
BRLab - Branching Genealogy Laboratory

G(U) = 1{c^{τ−ε}(U) = c}·f(τ(U))·∏ F_i(U_i^{τ−ε})

المكتبة المسماة (JSON):
- دوال العمق: constant, indicator, depth-polynomial
- الدوال: constant, mark-polynomial, product
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import FunctionalSpecError
from .services import MarkedMatrix, PlanarUltrametricMatrix, _as_array, partition_at, tau


# ========== Depth functions ==========

@dataclass(frozen=True)
class ConstantDepth:
    value: float = 1.0

    def __call__(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'constant', 'value': self.value}


@dataclass(frozen=True)
class DepthIndicator:
    """f(u) = 1{u > threshold}."""
    threshold: float

    def __call__(self, u):
        return (np.asarray(u, dtype=float) > self.threshold).astype(float)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return (self.threshold,)

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'indicator', 'threshold': self.threshold}


@dataclass(frozen=True)
class DepthPolynomial:
    """f(u) = Σ a_i u^i."""
    coefficients: Tuple[float, ...]

    def __call__(self, u):
        return np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), self.coefficients)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'depth-polynomial', 'coefficients': list(self.coefficients)}


DepthFunction = Union[ConstantDepth, DepthIndicator, DepthPolynomial]


def depth_from_dict(data: Dict[str, Any]) -> DepthFunction:
    kind = data.get('type')
    if kind == 'constant':
        return ConstantDepth(float(data.get('value', 1.0)))
    if kind == 'indicator':
        return DepthIndicator(float(data['threshold']))
    if kind == 'depth-polynomial':
        return DepthPolynomial(tuple(float(a) for a in data['coefficients']))
    raise FunctionalSpecError('Unknown depth function', type=kind)


# ========== Functionals ==========

@dataclass(frozen=True)
class Constant:
    """G ≡ value على المصفوفات من أي حجم."""
    value: float = 1.0

    @property
    def size(self) -> Optional[int]:
        return None

    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'constant', 'value': self.value}


@dataclass(frozen=True)
class MarkPolynomial:
    """دالة ورقة واحدة: g(x) = Σ a_i x^i لعلامة الورقة."""
    coefficients: Tuple[float, ...]

    @property
    def size(self) -> Optional[int]:
        return 1

    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coefficients)

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'mark-polynomial', 'coefficients': list(self.coefficients)}


@dataclass(frozen=True)
class ProductFunctional:
    """
    G(U) = 1{c^{τ−ε}(U) = c}·f(τ(U))·∏ F_i(U_i^{τ−ε}).

    Raises:
        FunctionalSpecError: إذا لم يطابق عدد الأبناء أو أحجامهم التركيبة
    """
    composition: Tuple[int, ...]
    depth: DepthFunction
    children: Tuple['Functional', ...]
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.composition or any(p < 1 for p in self.composition):
            raise FunctionalSpecError('Composition parts must be positive', composition=self.composition)
        if len(self.children) != len(self.composition):
            raise FunctionalSpecError(
                'One child functional per part is required',
                parts=len(self.composition), children=len(self.children),
            )
        for part, child in zip(self.composition, self.children):
            if child.size is not None and child.size != part:
                raise FunctionalSpecError('Child functional size does not match its part', part=part, size=child.size)
        if self.epsilon < 0:
            raise FunctionalSpecError('epsilon must be non-negative', epsilon=self.epsilon)

    @property
    def size(self) -> int:
        return sum(self.composition)

    def breakpoints(self) -> Tuple[float, ...]:
        points = set(self.depth.breakpoints)
        for child in self.children:
            points.update(child.breakpoints())
        return tuple(sorted(points))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'type': 'product',
            'composition': list(self.composition),
            'depth': self.depth.to_dict(),
            'children': [child.to_dict() for child in self.children],
            'epsilon': self.epsilon,
        }

    @classmethod
    def uniform(cls, composition: Sequence[int], depth: Optional[DepthFunction] = None,
                epsilon: float = 0.0) -> 'ProductFunctional':
        """تركيبة c مع أبناء ثابتة تساوي 1."""
        return cls(tuple(composition), depth or ConstantDepth(), tuple(Constant() for _ in composition), epsilon)


Functional = Union[Constant, MarkPolynomial, ProductFunctional]


def functional_from_dict(data: Dict[str, Any]) -> Functional:
    kind = data.get('type')
    if kind == 'constant':
        return Constant(float(data.get('value', 1.0)))
    if kind == 'mark-polynomial':
        return MarkPolynomial(tuple(float(a) for a in data['coefficients']))
    if kind == 'product':
        return ProductFunctional(
            composition=tuple(int(p) for p in data['composition']),
            depth=depth_from_dict(data.get('depth', {'type': 'constant'})),
            children=tuple(functional_from_dict(child) for child in data['children']),
            epsilon=float(data.get('epsilon', 0.0)),
        )
    raise FunctionalSpecError('Unknown functional', type=kind)


def load_functional(text: str) -> Functional:
    try:
        return functional_from_dict(json.loads(text))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FunctionalSpecError):
            raise
        raise FunctionalSpecError(f'Malformed functional JSON: {exc}') from exc


def dump_functional(G: Functional) -> str:
    return json.dumps(G.to_dict(), sort_keys=True)


# ========== Evaluation ==========

def _evaluate(G: Functional, U: np.ndarray, marks: Tuple[float, ...]) -> float:
    k = U.shape[0]
    if isinstance(G, Constant):
        return G.value
    if isinstance(G, MarkPolynomial):
        if k != 1:
            raise FunctionalSpecError('Mark functional needs a single leaf', k=k)
        if not marks:
            raise FunctionalSpecError('Mark functional needs marks')
        return float(G(marks[0]))
    if k != G.size:
        raise FunctionalSpecError('Matrix size does not match the functional', k=k, size=G.size)
    depth = tau(U)
    level = depth - G.epsilon if G.epsilon > 0 else depth
    blocks, intervals = partition_at(U, level)
    if not intervals:
        return 0.0
    if tuple(len(b) for b in blocks) != G.composition:
        return 0.0
    value = float(G.depth(depth))
    if value == 0.0:
        return 0.0
    for block, child in zip(blocks, G.children):
        sub = U[np.ix_(block, block)]
        value *= _evaluate(child, sub, tuple(marks[i] for i in block) if marks else ())
        if value == 0.0:
            return 0.0
    return value


def eval_functional(G: Functional, M: Union[MarkedMatrix, PlanarUltrametricMatrix, np.ndarray],
                    marks: Sequence[float] = ()) -> float:
    """
    قيمة الدالة المنتجية على مصفوفة (معلّمة أو لا).

    المصفوفات المبدَّلة غير المستوية مقبولة: تعطي 0 إذا لم تكن الكتل فترات،
    وعلاماتها تُمرَّر عبر marks.
    """
    if isinstance(M, MarkedMatrix):
        return _evaluate(G, M.matrix.entries, tuple(M.marks))
    return _evaluate(G, _as_array(M), tuple(marks))
