from django.apps import AppConfig


class MotionConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'motion'
