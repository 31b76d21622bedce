"""
Service Layer للمصفوفات فوق المترية المستوية
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. التحقق من المصفوفة (التناظر، القطر الصفري، الخاصية المستوية)
2. العمق τ(U) والتفكيك عند المستوى s إلى تركيبة ومصفوفات جزئية
3. إعادة البناء وتأثير التباديل والبناء من أعماق التفرع
4. قراءة وكتابة CSV والترتيب المستوي من مسارات الأنساب
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    AsymmetryError,
    NestingError,
    NonZeroDiagonalError,
    PlanarityViolationError,
    UltrametricError,
)

logger = logging.getLogger('ultrametric')

Composition = Tuple[int, ...]
Block = Tuple[int, ...]


# ========== Domain Types ==========

@dataclass(frozen=True, eq=False)
class PlanarUltrametricMatrix:
    """مصفوفة k×k فوق مترية مستوية (غير قابلة للتعديل)."""
    entries: np.ndarray

    @property
    def k(self) -> int:
        return int(self.entries.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlanarUltrametricMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(np.array_equal(self.entries, other.entries))

    def __hash__(self) -> int:
        return hash((self.entries.shape, self.entries.tobytes()))

    def __getitem__(self, index):
        return self.entries[index]

    def tolist(self) -> List[List[float]]:
        return self.entries.tolist()


@dataclass(frozen=True)
class MarkedMatrix:
    """مصفوفة مع علامات (مواقع) الأوراق."""
    matrix: PlanarUltrametricMatrix
    marks: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.marks and len(self.marks) != self.matrix.k:
            raise UltrametricError('marks length must equal k', k=self.matrix.k, marks=len(self.marks))

    @property
    def k(self) -> int:
        return self.matrix.k

    def restrict(self, block: Sequence[int]) -> Tuple[float, ...]:
        if not self.marks:
            return ()
        return tuple(self.marks[i] for i in block)


@dataclass(frozen=True)
class Decomposition:
    """نتيجة التفكيك عند المستوى s."""
    composition: Composition
    submatrices: Tuple[PlanarUltrametricMatrix, ...]
    blocks: Tuple[Block, ...]


MatrixLike = Union[PlanarUltrametricMatrix, np.ndarray, Sequence[Sequence[float]]]


def _as_array(M: MatrixLike) -> np.ndarray:
    if isinstance(M, PlanarUltrametricMatrix):
        return M.entries
    return np.asarray(M, dtype=float)


def _freeze(entries: np.ndarray) -> PlanarUltrametricMatrix:
    frozen = np.array(entries, dtype=float, copy=True)
    frozen.setflags(write=False)
    return PlanarUltrametricMatrix(frozen)


# ========== Validation ==========

def _check_square(U: np.ndarray) -> None:
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 1:
        raise UltrametricError('Matrix must be square with k >= 1', shape=U.shape)
    if np.any(U < 0) or not np.all(np.isfinite(U)):
        raise UltrametricError('Entries must be finite and non-negative')
    bad = np.argwhere(U != U.T)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise AsymmetryError('Matrix is not symmetric', i=i, j=j)
    diagonal = np.flatnonzero(np.diag(U))
    if diagonal.size:
        raise NonZeroDiagonalError('Diagonal must be zero', index=int(diagonal[0]))


def _triples(k: int) -> np.ndarray:
    idx = np.arange(k)
    i, l, j = np.meshgrid(idx, idx, idx, indexing='ij')
    return (i < l) & (l < j)


def validate(M: MatrixLike) -> PlanarUltrametricMatrix:
    """
    التحقق من الخاصية المستوية U_ij = max(U_il, U_lj) لكل i < l < j.

    Raises:
        AsymmetryError, NonZeroDiagonalError, PlanarityViolationError
    """
    U = _as_array(M)
    _check_square(U)
    k = U.shape[0]
    if k >= 3:
        joined = np.maximum(U[:, :, None], U[None, :, :])
        mask = _triples(k) & (joined != U[:, None, :])
        bad = np.argwhere(mask)
        if bad.size:
            triple = tuple(int(v) for v in bad[0])
            logger.debug(f'Planarity violated at triple {triple}')
            raise PlanarityViolationError('Planar ultrametric property violated', triple=triple)
    return _freeze(U)


def is_ultrametric(M: MatrixLike) -> bool:
    """الخاصية فوق المترية العامة U_ij ≤ max(U_il, U_lj) (بدون ترتيب)."""
    U = _as_array(M)
    try:
        _check_square(U)
    except UltrametricError:
        return False
    joined = np.maximum(U[:, :, None], U[None, :, :])
    return bool(np.all(U[:, None, :] <= joined))


def tau(U: MatrixLike) -> float:
    """عمق أول نقطة تفرع: أكبر مدخل (0 عند k=1)."""
    entries = _as_array(U)
    return float(entries.max()) if entries.size else 0.0


# ========== Decomposition ==========

def partition_at(M: MatrixLike, s: float) -> Tuple[Tuple[Block, ...], bool]:
    """
    تجزئة [k] بالعلاقة i~j ⇔ U_ij < s (مكونات مترابطة).

    Returns:
        (الكتل مرتبة بأصغر عنصر، هل كل الكتل فترات متتالية)
    """
    U = _as_array(M)
    k = U.shape[0]
    adjacency = csr_matrix((U < s) & ~np.eye(k, dtype=bool))
    _, labels = connected_components(adjacency, directed=False)
    groups = {}
    for index, label in enumerate(labels):
        groups.setdefault(int(label), []).append(index)
    blocks = tuple(sorted((tuple(g) for g in groups.values()), key=lambda b: b[0]))
    intervals = all(b[-1] - b[0] + 1 == len(b) for b in blocks)
    return blocks, intervals


def decompose_at(U: MatrixLike, s: float) -> Decomposition:
    """
    التركيبة c^s(U) والمصفوفات الجزئية U_i^s عند المستوى s (بمتباينة صارمة).

    Raises:
        PlanarityViolationError: إذا لم تكن الكتل فترات (مصفوفة غير مستوية)
    """
    if s < 0:
        raise UltrametricError('Level s must be non-negative', s=s)
    entries = _as_array(U)
    blocks, intervals = partition_at(entries, s)
    if not intervals:
        raise PlanarityViolationError('Level sets are not intervals', s=s)
    subs = tuple(_freeze(entries[np.ix_(b, b)]) for b in blocks)
    return Decomposition(tuple(len(b) for b in blocks), subs, blocks)


def reconstruct(depth: float, c: Sequence[int], subs: Sequence[MatrixLike]) -> PlanarUltrametricMatrix:
    """
    دمج المصفوفات الجزئية تحت جذر عمقه depth.

    Raises:
        NestingError: إذا كان τ(sub) ≥ depth أو لا تطابق الأحجام التركيبة
    """
    c = tuple(int(p) for p in c)
    arrays = [_as_array(sub) for sub in subs]
    if len(c) != len(arrays) or any(p < 1 for p in c):
        raise NestingError('Composition does not match the number of submatrices', composition=c)
    for part, sub in zip(c, arrays):
        if sub.shape != (part, part):
            raise NestingError('Submatrix size does not match its part', part=part, shape=sub.shape)
        if part > 1 and tau(sub) >= depth:
            raise NestingError('Submatrix is not nested below the root', depth=depth, sub_depth=tau(sub))
    if len(c) == 1:
        return validate(arrays[0])
    k = sum(c)
    U = np.full((k, k), float(depth))
    start = 0
    for part, sub in zip(c, arrays):
        U[start:start + part, start:start + part] = sub
        start += part
    return validate(U)


def permute(U: MatrixLike, P: Sequence[int]) -> np.ndarray:
    """المدخلات U_{P(i),P(j)} (قد لا تكون مستوية)."""
    entries = _as_array(U)
    order = np.asarray(P, dtype=int)
    if sorted(order.tolist()) != list(range(entries.shape[0])):
        raise UltrametricError('P must be a permutation of [k]', P=tuple(order.tolist()))
    return entries[np.ix_(order, order)]


def from_depths(H: Sequence[float]) -> PlanarUltrametricMatrix:
    """U_ij = max(H_i, …, H_{j−1}) لكل i < j."""
    depths = np.asarray(H, dtype=float)
    if np.any(depths < 0):
        raise UltrametricError('Depths must be non-negative')
    k = depths.size + 1
    U = np.zeros((k, k))
    for i in range(k - 1):
        U[i, i + 1:] = np.maximum.accumulate(depths[i:])
    return validate(U + U.T)


def depths_of(U: MatrixLike) -> np.ndarray:
    """معكوس from_depths: H_i = U_{i,i+1}."""
    entries = _as_array(U)
    return np.diagonal(entries, offset=1).copy()


def compositions(k: int) -> Iterator[Composition]:
    """كل تركيبات k (2^{k−1} تركيبة) مرتبة معجمياً."""
    if k < 1:
        return
    for cuts in itertools.product((False, True), repeat=k - 1):
        parts, run = [], 1
        for cut in cuts:
            if cut:
                parts.append(run)
                run = 1
            else:
                run += 1
        parts.append(run)
        yield tuple(parts)


def planar_order(paths: Sequence[Sequence[int]]) -> List[int]:
    """ترتيب الأوراق معجمياً حسب مسارات رتب الأبناء من الجذر."""
    return sorted(range(len(paths)), key=lambda i: tuple(paths[i]))


# ========== CSV ==========

def write_matrix_csv(U: MatrixLike, path: Union[str, Path]) -> None:
    """صف عنوان `k` ثم قيمة k ثم k صفوف."""
    entries = _as_array(U)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['k'])
        writer.writerow([entries.shape[0]])
        for row in entries:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path: Union[str, Path]) -> PlanarUltrametricMatrix:
    with open(path, newline='', encoding='utf-8') as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows or rows[0][0].strip() != 'k':
        raise UltrametricError('Missing `k` header', path=str(path))
    k = int(rows[1][0])
    body = rows[2:2 + k]
    if len(body) != k:
        raise UltrametricError('Row count does not match k', k=k, rows=len(body))
    return validate([[float(v) for v in row] for row in body])


def random_planar(k: int, rng: np.random.Generator, values: Optional[Iterable[float]] = None) -> PlanarUltrametricMatrix:
    """مصفوفة عشوائية صالحة من أعماق عشوائية."""
    if values is not None:
        pool = np.asarray(list(values), dtype=float)
        depths = rng.choice(pool, size=k - 1)
    else:
        depths = rng.exponential(size=k - 1)
    return from_depths(depths)
