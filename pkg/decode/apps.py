from django.apps import AppConfig


class DecodeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'decode'
    verbose_name = 'parallel decoding'
