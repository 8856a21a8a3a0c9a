from django.apps import AppConfig


class ZslConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'zsl'
    verbose_name = 'Zero-shot learning'
