from django.apps import AppConfig


class BbmConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.bbm'
    verbose_name = 'الحركة البراونية المتفرعة'
