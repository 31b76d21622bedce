"""
خدمات منصة التجارب
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. ExperimentSpec: ملف التجربة (أقسام key = value) والتحقق منه
2. Comparison / ComparisonRecord: مقارنة lhs ± se مع rhs ± se والحكم |z| ≤ العتبة
3. bonferroni_threshold: تصحيح العتبة عبر عدة مقارنات
4. ExperimentReport و ResultSink: كتابة CSV و JSON من كاتب واحد
5. Scheduler: توزيع التكرارات على دفعات ثابتة وعمليات متوازية
6. verify_report: إعادة حساب الأحكام من تقرير JSON
"""

import configparser
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from django.conf import settings
from scipy import stats

from apps.core.rng import chunk_sizes, stream
from apps.core.stats import Estimate, merge, z_score

from .exceptions import OutputPathError, ValidationError

logger = logging.getLogger('harness')

DEFAULT_THRESHOLD = 3.0
REPORT_COLUMNS = ['experiment', 'params_hash', 'label', 'lhs', 'lhs_se', 'rhs', 'rhs_se', 'z', 'verdict']


# ========== Settings ==========

def default_threshold() -> float:
    return float(getattr(settings, 'LAB_Z_THRESHOLD', DEFAULT_THRESHOLD))


def default_output_dir() -> Path:
    return Path(getattr(settings, 'LAB_OUTPUT_DIR', 'lab_output'))


def worker_count() -> int:
    return max(1, int(getattr(settings, 'LAB_WORKERS', 1)))


def default_chunk_size() -> int:
    return max(1, int(getattr(settings, 'LAB_CHUNK_SIZE', 2000)))


# ========== Experiment file ==========

def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValidationError('Expected a boolean', value=text)


@dataclass(frozen=True)
class ExperimentSpec:
    """
    وصف تجربة واحدة.

    الصيغة:
        [experiment]
        name = many-to-few-k1
        replicates = 100000
        seed = 7
        threshold = 3
        bonferroni = false
        output = lab_output/m2f
        targets = bbm, spine

        [params]
        potential = zero
        L = 5
    """
    name: str
    replicates: int = 1000
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    bonferroni: bool = False
    output: Optional[Path] = None
    targets: Tuple[str, ...] = ()
    params: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, source: str = '<string>') -> 'ExperimentSpec':
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ValidationError(f'Malformed experiment file: {exc}', source=source) from exc
        if not parser.has_section('experiment'):
            raise ValidationError('Missing [experiment] section', source=source)
        section = parser['experiment']
        try:
            spec = cls(
                name=section.get('name', '').strip(),
                replicates=int(section.get('replicates', '1000')),
                seed=int(section.get('seed', '0')),
                threshold=float(section.get('threshold', str(default_threshold()))),
                bonferroni=_parse_bool(section.get('bonferroni', 'false')),
                output=Path(section['output']) if section.get('output') else None,
                targets=tuple(t.strip() for t in section.get('targets', '').split(',') if t.strip()),
                params=dict(parser['params']) if parser.has_section('params') else {},
            )
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f'Invalid value in [experiment]: {exc}', source=source) from exc
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ExperimentSpec':
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as exc:
            raise ValidationError('Cannot read experiment file', path=str(path)) from exc
        return cls.from_text(text, source=str(path))

    def validate(self) -> None:
        if not self.name:
            raise ValidationError('Experiment name is required')
        if self.replicates < 1:
            raise ValidationError('Replicate count must be at least 1', replicates=self.replicates)
        if self.seed < 0:
            raise ValidationError('Seed must be non-negative', seed=self.seed)
        if not self.threshold > 0:
            raise ValidationError('Threshold must be positive', threshold=self.threshold)

    @property
    def output_dir(self) -> Path:
        return self.output if self.output is not None else default_output_dir() / self.name

    @property
    def params_hash(self) -> str:
        """SHA-256 لتمثيل قانوني للمعاملات (بدون مسار الإخراج)."""
        payload = {
            'name': self.name,
            'replicates': self.replicates,
            'seed': self.seed,
            'threshold': self.threshold,
            'bonferroni': self.bonferroni,
            'params': dict(sorted(self.params.items())),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()

    # ----- params -----

    def get_str(self, key: str, default: str) -> str:
        return self.params.get(key, default).strip()

    def get_float(self, key: str, default: float) -> float:
        try:
            return float(self.params[key]) if key in self.params else float(default)
        except ValueError as exc:
            raise ValidationError('Expected a number', key=key, value=self.params[key]) from exc

    def get_bool(self, key: str, default: bool) -> bool:
        return _parse_bool(self.params[key]) if key in self.params else bool(default)

    def get_int(self, key: str, default: int) -> int:
        try:
            return int(self.params[key]) if key in self.params else int(default)
        except ValueError as exc:
            raise ValidationError('Expected an integer', key=key, value=self.params[key]) from exc

    def get_floats(self, key: str, default: Sequence[float]) -> List[float]:
        if key not in self.params:
            return [float(v) for v in default]
        try:
            return [float(v) for v in self.params[key].replace(',', ' ').split()]
        except ValueError as exc:
            raise ValidationError('Expected a list of numbers', key=key, value=self.params[key]) from exc


# ========== Comparisons ==========

@dataclass(frozen=True)
class Comparison:
    """
    مقارنة قبل تطبيق العتبة.

    المقارنات الحتمية تحمل tolerance، ويصير lhs_se = tolerance/threshold
    بحيث |z| ≤ threshold ⇔ |lhs − rhs| ≤ tolerance.
    """
    label: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float = 0.0
    tolerance: Optional[float] = None

    @classmethod
    def statistical(cls, label: str, lhs: Estimate, rhs: Union[Estimate, float]) -> 'Comparison':
        if not isinstance(rhs, Estimate):
            rhs = Estimate.exact(rhs)
        return cls(label, lhs.value, lhs.stderr, rhs.value, rhs.stderr)

    @classmethod
    def deterministic(cls, label: str, lhs: float, rhs: float, tolerance: float) -> 'Comparison':
        if tolerance < 0:
            raise ValidationError('Tolerance must be non-negative', label=label, tolerance=tolerance)
        return cls(label, float(lhs), 0.0, float(rhs), 0.0, float(tolerance))

    def record(self, experiment: str, params_hash: str, threshold: float) -> 'ComparisonRecord':
        lhs_se = self.lhs_se if self.tolerance is None else self.tolerance / threshold
        return ComparisonRecord.build(experiment, params_hash, self.label,
                                      self.lhs, lhs_se, self.rhs, self.rhs_se, threshold)


@dataclass(frozen=True)
class ComparisonRecord:
    experiment: str
    params_hash: str
    label: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    verdict: str

    @classmethod
    def build(cls, experiment: str, params_hash: str, label: str, lhs: float, lhs_se: float,
              rhs: float, rhs_se: float, threshold: float) -> 'ComparisonRecord':
        z = z_score(lhs, lhs_se, rhs, rhs_se)
        return cls(experiment, params_hash, label, float(lhs), float(lhs_se), float(rhs), float(rhs_se),
                   float(z), verdict_for(z, threshold))

    @property
    def passed(self) -> bool:
        return self.verdict == 'pass'

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def verdict_for(z: float, threshold: float) -> str:
    return 'pass' if not math.isnan(z) and abs(z) <= threshold else 'fail'


def bonferroni_threshold(threshold: float, comparisons: int) -> float:
    """Φ⁻¹(1 − p/(2m)) حيث p = 2(1 − Φ(threshold))."""
    if comparisons <= 1:
        return float(threshold)
    p = 2.0 * stats.norm.sf(threshold)
    return float(stats.norm.isf(p / (2.0 * comparisons)))


# ========== Report ==========

@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    params_hash: str
    seed: int
    threshold: float
    records: Tuple[ComparisonRecord, ...]

    @classmethod
    def from_comparisons(cls, spec: ExperimentSpec, comparisons: Sequence[Comparison]) -> 'ExperimentReport':
        threshold = spec.threshold
        if spec.bonferroni:
            threshold = bonferroni_threshold(threshold, len(comparisons))
        records = tuple(c.record(spec.name, spec.params_hash, threshold) for c in comparisons)
        return cls(spec.name, spec.params_hash, spec.seed, threshold, records)

    @property
    def passed(self) -> int:
        return sum(1 for r in self.records if r.passed)

    @property
    def failed(self) -> int:
        return len(self.records) - self.passed

    @property
    def all_passed(self) -> bool:
        return self.failed == 0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records], columns=REPORT_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'experiment': self.experiment,
            'params_hash': self.params_hash,
            'seed': self.seed,
            'pass': self.passed,
            'fail': self.failed,
            'threshold': self.threshold,
            'records': [r.to_dict() for r in self.records],
        }


class ResultSink:
    """
    الكاتب الوحيد لملفات التقرير.

    <dir>/<experiment>.csv بصف عنوان وترميز RFC 4180 (نهايات CRLF)،
    و <dir>/<experiment>.json بالملخص والسجلات.
    """

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputPathError('Cannot create output directory', path=str(self.directory)) from exc
        if not os.access(self.directory, os.W_OK):
            raise OutputPathError('Output directory is not writable', path=str(self.directory))

    def paths(self, experiment: str) -> Tuple[Path, Path]:
        return self.directory / f'{experiment}.csv', self.directory / f'{experiment}.json'

    def write(self, report: ExperimentReport) -> Tuple[Path, Path]:
        csv_path, json_path = self.paths(report.experiment)
        try:
            report.frame().to_csv(csv_path, index=False, lineterminator='\r\n', float_format='%.17g')
            json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        except OSError as exc:
            raise OutputPathError('Cannot write report', path=str(self.directory)) from exc
        logger.info(f'Report written: {csv_path} ({report.passed} pass, {report.failed} fail)')
        return csv_path, json_path


# ========== Scheduler ==========

def _run_chunk(task):
    func, size, seed, experiment, index, args = task
    return func(size, stream(seed, experiment, index), *args)


def _run_point(task):
    func, args = task
    return func(*args)


class Scheduler:
    """
    يقسّم التكرارات إلى دفعات ثابتة الحجم، ولكل دفعة تيار (seed, experiment, index).

    النتيجة لا تعتمد على عدد العمال لأن الدفعات وتياراتها ثابتة.
    """

    def __init__(self, workers: Optional[int] = None, chunk: Optional[int] = None):
        self.workers = workers if workers is not None else worker_count()
        self.chunk = chunk if chunk is not None else default_chunk_size()

    def _map(self, fn: Callable, tasks: List[Any]) -> List[Any]:
        if self.workers <= 1 or len(tasks) <= 1:
            return [fn(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=min(self.workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))

    def replicates(self, func: Callable, total: int, seed: int, experiment: str, *args) -> List[Any]:
        """func(size, rng, *args) لكل دفعة، بالترتيب."""
        tasks = [(func, size, seed, experiment, index, args) for index, size in enumerate(chunk_sizes(total, self.chunk))]
        logger.debug(f'{experiment}: {total} replicates in {len(tasks)} chunks on {self.workers} workers')
        return self._map(_run_chunk, tasks)

    def grid(self, func: Callable, points: Sequence[Tuple]) -> List[Any]:
        """نقاط شبكة مستقلة func(*point)، بالترتيب."""
        return self._map(_run_point, [(func, tuple(point)) for point in points])


@dataclass
class ExperimentContext:
    """ما تراه دالة التجربة: المواصفة والمجدول وتيارات مفتاحها اسم التجربة."""
    spec: ExperimentSpec
    scheduler: Scheduler

    def key(self, tag: str = '') -> str:
        return f'{self.spec.name}/{tag}' if tag else self.spec.name

    def rng(self, tag: str = '', replicate: int = 0) -> np.random.Generator:
        return stream(self.spec.seed, self.key(tag), replicate)

    def samples(self, func: Callable, *args, total: Optional[int] = None, tag: str = '') -> np.ndarray:
        """دمج عينات كل الدفعات على المحور الأخير."""
        chunks = self.scheduler.replicates(func, total or self.spec.replicates, self.spec.seed, self.key(tag), *args)
        return np.concatenate(chunks, axis=-1)

    def estimate(self, func: Callable, *args, total: Optional[int] = None, tag: str = '') -> Estimate:
        """
        دمج تقديرات الدفعات المستقلة بـ merge.

        دفعة من عينة واحدة لا تعطي خطأً معيارياً، فتُجمع العينات كلها عندئذ.
        """
        chunks = self.scheduler.replicates(func, total or self.spec.replicates, self.spec.seed, self.key(tag), *args)
        if any(chunk.size < 2 for chunk in chunks):
            return Estimate.from_samples(np.concatenate(chunks))
        return merge(Estimate.from_samples(chunk) for chunk in chunks)


# ========== Verification ==========

@dataclass(frozen=True)
class ReportCheck:
    experiment: str
    threshold: float
    records: int
    failed: int
    mismatches: Tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.failed == 0 and not self.mismatches


def verify_report(path: Union[str, Path]) -> ReportCheck:
    """
    إعادة حساب z والحكم لكل سجل من JSON.

    Raises:
        ValidationError: إذا تعذرت قراءة التقرير أو نقص حقل
    """
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        threshold = float(data['threshold'])
        records = data['records']
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValidationError('Unreadable report', path=str(path)) from exc
    mismatches = []
    failed = 0
    for row in records:
        try:
            z = z_score(float(row['lhs']), float(row['lhs_se']), float(row['rhs']), float(row['rhs_se']))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError('Malformed record', path=str(path)) from exc
        verdict = verdict_for(z, threshold)
        if verdict != row.get('verdict'):
            mismatches.append(str(row.get('label', '?')))
        if verdict == 'fail':
            failed += 1
    if mismatches:
        logger.warning(f'Report {path}: {len(mismatches)} verdicts do not match their numbers')
    return ReportCheck(str(data.get('experiment', '')), threshold, len(records), failed, tuple(mismatches))
