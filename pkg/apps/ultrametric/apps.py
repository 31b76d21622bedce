from django.apps import AppConfig


class UltrametricConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.ultrametric'
    verbose_name = 'المصفوفات فوق المترية المستوية'
