"""
تسجيل نماذج harness في لوحة تحكم Django (قراءة فقط)
"""

from django.contrib import admin
from .models import ComparisonRow, ExperimentRun


class ReadOnlyAdmin(admin.ModelAdmin):
    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False

    def has_delete_permission(self, request, obj=None):
        return False


class ComparisonRowInline(admin.TabularInline):
    model = ComparisonRow
    extra = 0
    can_delete = False
    readonly_fields = ['label', 'lhs', 'lhs_se', 'rhs', 'rhs_se', 'z', 'verdict']

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(ReadOnlyAdmin):
    list_display = ['name', 'params_hash_short', 'seed', 'passed', 'failed', 'finished_at']
    list_filter = ['name', 'finished_at']
    search_fields = ['name', 'params_hash']
    date_hierarchy = 'finished_at'
    inlines = [ComparisonRowInline]

    def params_hash_short(self, obj):
        return obj.params_hash[:12]
    params_hash_short.short_description = 'بصمة المعاملات'


@admin.register(ComparisonRow)
class ComparisonRowAdmin(ReadOnlyAdmin):
    list_display = ['run', 'label', 'lhs', 'rhs', 'z', 'verdict']
    list_filter = ['verdict', 'run__name']
    search_fields = ['label', 'run__name']
