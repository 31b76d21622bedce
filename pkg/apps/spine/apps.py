from django.apps import AppConfig


class SpineAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.spine'
    verbose_name = 'العمود الفقري وقياسات k-spine'
