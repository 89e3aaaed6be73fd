from django.apps import AppConfig


class OneshotConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'oneshot'
    verbose_name = 'Multimodal one-shot matching'

    def ready(self):
        import oneshot.signals
