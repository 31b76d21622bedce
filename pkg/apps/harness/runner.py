"""
تشغيل تجربة من الكتالوج
BRLab - Branching Genealogy Laboratory

run_experiment: التحقق من الملف، التنفيذ، كتابة CSV/JSON، ثم حفظ السجل في قاعدة البيانات.
"""

import logging
import math
from typing import Optional

from django.db import transaction
from django.utils import timezone

from .catalog import get_experiment
from .models import ComparisonRow, ExperimentRun
from .services import ExperimentContext, ExperimentReport, ExperimentSpec, ResultSink, Scheduler

logger = logging.getLogger('harness')


def _finite(value: float) -> float:
    """NaN لا يُخزَّن في عمود FloatField؛ يُحفظ كـ inf (حكمه fail في الحالتين)."""
    return math.inf if math.isnan(value) else value


def persist_report(report: ExperimentReport, csv_path, json_path, started_at) -> ExperimentRun:
    with transaction.atomic():
        run = ExperimentRun.objects.create(
            name=report.experiment,
            params_hash=report.params_hash,
            seed=report.seed,
            threshold=report.threshold,
            passed=report.passed,
            failed=report.failed,
            csv_path=str(csv_path),
            json_path=str(json_path),
            started_at=started_at,
        )
        ComparisonRow.objects.bulk_create([
            ComparisonRow(
                run=run,
                label=record.label,
                lhs=_finite(record.lhs),
                lhs_se=_finite(record.lhs_se),
                rhs=_finite(record.rhs),
                rhs_se=_finite(record.rhs_se),
                z=_finite(record.z),
                verdict=record.verdict,
            )
            for record in report.records
        ])
    return run


def run_experiment(spec: ExperimentSpec, persist: bool = True,
                   scheduler: Optional[Scheduler] = None) -> ExperimentReport:
    """
    تنفيذ تجربة وكتابة تقريرها.

    Raises:
        ValidationError: ملف التجربة غير صالح
        UnknownExperimentError: الاسم غير موجود في الكتالوج
        OutputPathError: مجلد الإخراج غير قابل للكتابة (قبل أي حساب)
    """
    spec.validate()
    entry = get_experiment(spec.name)
    sink = ResultSink(spec.output_dir)
    scheduler = scheduler or Scheduler()
    started_at = timezone.now()
    logger.info(f'Running {spec.name} (seed={spec.seed}, replicates={spec.replicates}, hash={spec.params_hash[:12]})')

    comparisons = entry.run(ExperimentContext(spec, scheduler))
    report = ExperimentReport.from_comparisons(spec, comparisons)
    csv_path, json_path = sink.write(report)

    if persist:
        persist_report(report, csv_path, json_path, started_at)

    elapsed = (timezone.now() - started_at).total_seconds()
    if report.all_passed:
        logger.info(f'{spec.name}: all {report.passed} comparisons passed in {elapsed:.1f}s')
    else:
        failing = ', '.join(r.label for r in report.records if not r.passed)
        logger.warning(f'{spec.name}: {report.failed} of {len(report.records)} comparisons failed: {failing}')
    return report
