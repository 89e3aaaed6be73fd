"""
Django settings for the oneshot_matching project.

The project has no HTTP surface: it is driven through management commands
(gen_synth, train, eval, report) and stores training runs and evaluation
records in a local sqlite database.
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    "ONESHOT_SECRET_KEY", "oneshot-insecure-4v!q0z7m#c2r8e-local-experiments-only"
)

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "rest_framework",
    "django_filters",
    "oneshot",
]


# Database

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "oneshot.sqlite3",
    }
}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# REST Framework settings (serializers and renderers only)
REST_FRAMEWORK = {
    "COERCE_DECIMAL_TO_STRING": False,
    "UNICODE_JSON": True,
    "COMPACT_JSON": True,
    "UNAUTHENTICATED_USER": None,
}

# Overrides of oneshot.conf.DEFAULTS
ONESHOT = {
    "DATA_DIR": os.environ.get("ONESHOT_DATA_DIR", str(BASE_DIR / "data")),
    "RUNS_DIR": os.environ.get("ONESHOT_RUNS_DIR", str(BASE_DIR / "runs")),
}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "[{asctime}] {levelname} {name} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
        "file": {
            "class": "logging.FileHandler",
            "filename": BASE_DIR / "oneshot_logs.log",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "WARNING",
            "propagate": True,
        },
        "oneshot": {
            "handlers": ["console", "file"],
            "level": os.environ.get("ONESHOT_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}
