"""
Library defaults, overridable through the ``ONESHOT`` dict in Django settings.

Usage::

    from oneshot.conf import oneshot_settings
    oneshot_settings.EPISODES
"""
from django.conf import settings

DEFAULTS = {
    "DATA_DIR": "data",
    "RUNS_DIR": "runs",
    "TARGET_FRAMES": 120,
    "WAYS": 11,
    "SHOTS": 1,
    "MATCHING_SIZE": 10,
    "EPISODES": 400,
    "QUERIES": 10,
    "SEEDS": 10,
    "MARGIN": 0.5,
    "ONLINE_P": 128,
    "ONLINE_K": 8,
    "OFFLINE_P": 32,
    "OFFLINE_K": 2,
    "LEARNING_RATE": 1e-3,
    "LR_DECAY": 0.96,
    "MAX_EPOCHS": 100,
    "BATCH_SIZE": 200,
    "PATIENCE": 5,
    "VALIDATION_EPISODES": 50,
    "PRESET": "small",
    "WORKERS": 1,
}


class OneshotSettings:
    """Attribute access to ``settings.ONESHOT`` falling back to DEFAULTS."""

    def __getattr__(self, name):
        if name not in DEFAULTS:
            raise AttributeError(f"Invalid oneshot setting: '{name}'")
        user_settings = getattr(settings, "ONESHOT", {})
        return user_settings.get(name, DEFAULTS[name])


oneshot_settings = OneshotSettings()
