from django.apps import AppConfig


class CausticBoundsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "caustic_bounds"
    verbose_name = "Caustic Bounds"
