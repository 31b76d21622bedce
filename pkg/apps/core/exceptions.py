"""
الاستثناءات الأساسية للمختبر
BRLab - Branching Genealogy Laboratory

كل تطبيق يعرّف هرمية استثناءات خاصة به تنحدر من LabError،
وأوامر الإدارة تحوّل LabError إلى CommandError.
"""

from typing import Any, Dict


class LabError(Exception):
    """Base exception for all laboratory errors."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        details = ', '.join(f'{key}={value!r}' for key, value in sorted(self.context.items()))
        return f'{base} ({details})'
