"""
نماذج سجل التجارب
BRLab - Branching Genealogy Laboratory

هذا الملف يحتوي على:
1. ExperimentRun: تشغيل واحد لتجربة من الكتالوج مع عدد الأحكام ومسارات الإخراج
2. ComparisonRow: صف مقارنة (lhs ± se مقابل rhs ± se) مع z والحكم
"""

from django.db import models


class ExperimentRun(models.Model):
    """
    جدول تشغيلات التجارب
    كل تشغيل لـ lab run يُسجَّل هنا مع بصمة المعاملات
    """
    name = models.CharField(
        max_length=100,
        db_index=True,
        verbose_name='اسم التجربة'
    )
    params_hash = models.CharField(
        max_length=64,
        verbose_name='بصمة المعاملات'
    )
    seed = models.PositiveBigIntegerField(
        verbose_name='البذرة'
    )
    threshold = models.FloatField(
        verbose_name='عتبة z'
    )
    passed = models.PositiveIntegerField(
        default=0,
        verbose_name='عدد الناجح'
    )
    failed = models.PositiveIntegerField(
        default=0,
        verbose_name='عدد الفاشل'
    )
    csv_path = models.CharField(
        max_length=500,
        verbose_name='ملف CSV'
    )
    json_path = models.CharField(
        max_length=500,
        verbose_name='ملف JSON'
    )
    started_at = models.DateTimeField(
        verbose_name='وقت البدء'
    )
    finished_at = models.DateTimeField(
        auto_now_add=True,
        verbose_name='وقت الانتهاء'
    )

    class Meta:
        db_table = 'experiment_runs'
        verbose_name = 'تشغيل تجربة'
        verbose_name_plural = 'تشغيلات التجارب'
        ordering = ['-finished_at']

    def __str__(self):
        return f'{self.name} [{self.params_hash[:8]}] {self.passed}/{self.passed + self.failed}'

    @property
    def all_passed(self) -> bool:
        return self.failed == 0


class ComparisonRow(models.Model):
    """
    جدول صفوف المقارنة
    نفس مخطط ComparisonRecord في التقرير
    """
    VERDICTS = [
        ('pass', 'ناجح'),
        ('fail', 'فاشل'),
    ]

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='rows',
        verbose_name='التشغيل'
    )
    label = models.CharField(
        max_length=200,
        verbose_name='المقارنة'
    )
    lhs = models.FloatField(verbose_name='الطرف الأيسر')
    lhs_se = models.FloatField(verbose_name='خطأ الطرف الأيسر')
    rhs = models.FloatField(verbose_name='الطرف الأيمن')
    rhs_se = models.FloatField(verbose_name='خطأ الطرف الأيمن')
    z = models.FloatField(verbose_name='z')
    verdict = models.CharField(
        max_length=4,
        choices=VERDICTS,
        verbose_name='الحكم'
    )

    class Meta:
        db_table = 'comparison_rows'
        verbose_name = 'صف مقارنة'
        verbose_name_plural = 'صفوف المقارنة'
        ordering = ['run', 'id']

    def __str__(self):
        return f'{self.label}: {self.verdict}'
