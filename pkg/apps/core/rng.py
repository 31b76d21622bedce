"""
تيارات الأرقام العشوائية القابلة لإعادة الإنتاج
BRLab - Branching Genealogy Laboratory

كل تكرار (replicate) يحصل على تيار Philox مستقل مفتاحه
(البذرة، اسم التجربة، رقم التكرار)، لذلك لا تعتمد النتائج على ترتيب الجدولة
ولا على عدد العمليات المتوازية.
"""

import zlib
from typing import List

import numpy as np


def experiment_key(name: str) -> int:
    """مفتاح عددي ثابت لاسم التجربة (CRC32)."""
    return zlib.crc32(name.encode('utf-8'))


def stream(seed: int, experiment: str = '', replicate: int = 0) -> np.random.Generator:
    """
    إنشاء تيار عشوائي معتمد على العدّاد.

    Args:
        seed: البذرة الرئيسية للتجربة
        experiment: اسم التجربة (يدخل في المفتاح)
        replicate: رقم التكرار أو رقم الدفعة

    Returns:
        np.random.Generator مبني على Philox
    """
    if seed < 0 or replicate < 0:
        raise ValueError('seed and replicate must be non-negative')
    sequence = np.random.SeedSequence(
        entropy=seed,
        spawn_key=(experiment_key(experiment), replicate),
    )
    return np.random.Generator(np.random.Philox(sequence))


def chunk_sizes(total: int, chunk: int) -> List[int]:
    """تقسيم عدد التكرارات إلى دفعات ثابتة الحجم (مستقلة عن عدد العمال)."""
    if total < 1:
        return []
    chunk = max(1, int(chunk))
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


