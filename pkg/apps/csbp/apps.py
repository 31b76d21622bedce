from django.apps import AppConfig


class CsbpConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.csbp'
    verbose_name = 'عمليات التفرع ذات الحالة المستمرة'
