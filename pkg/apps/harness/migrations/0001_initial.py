# Generated by Django 5.2.10 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(db_index=True, max_length=100, verbose_name='اسم التجربة')),
                ('params_hash', models.CharField(max_length=64, verbose_name='بصمة المعاملات')),
                ('seed', models.PositiveBigIntegerField(verbose_name='البذرة')),
                ('threshold', models.FloatField(verbose_name='عتبة z')),
                ('passed', models.PositiveIntegerField(default=0, verbose_name='عدد الناجح')),
                ('failed', models.PositiveIntegerField(default=0, verbose_name='عدد الفاشل')),
                ('csv_path', models.CharField(max_length=500, verbose_name='ملف CSV')),
                ('json_path', models.CharField(max_length=500, verbose_name='ملف JSON')),
                ('started_at', models.DateTimeField(verbose_name='وقت البدء')),
                ('finished_at', models.DateTimeField(auto_now_add=True, verbose_name='وقت الانتهاء')),
            ],
            options={
                'verbose_name': 'تشغيل تجربة',
                'verbose_name_plural': 'تشغيلات التجارب',
                'db_table': 'experiment_runs',
                'ordering': ['-finished_at'],
            },
        ),
        migrations.CreateModel(
            name='ComparisonRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('label', models.CharField(max_length=200, verbose_name='المقارنة')),
                ('lhs', models.FloatField(verbose_name='الطرف الأيسر')),
                ('lhs_se', models.FloatField(verbose_name='خطأ الطرف الأيسر')),
                ('rhs', models.FloatField(verbose_name='الطرف الأيمن')),
                ('rhs_se', models.FloatField(verbose_name='خطأ الطرف الأيمن')),
                ('z', models.FloatField(verbose_name='z')),
                ('verdict', models.CharField(choices=[('pass', 'ناجح'), ('fail', 'فاشل')], max_length=4, verbose_name='الحكم')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='rows', to='harness.experimentrun', verbose_name='التشغيل')),
            ],
            options={
                'verbose_name': 'صف مقارنة',
                'verbose_name_plural': 'صفوف المقارنة',
                'db_table': 'comparison_rows',
                'ordering': ['run', 'id'],
            },
        ),
    ]
