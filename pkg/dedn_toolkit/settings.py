"""
Django settings for the DEDN Toolkit project.

The project has no web surface: Django provides settings, the management
command that drives the pipeline, and the test runner. Every built-in
default of the toolkit lives in the DEDN dict below.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# =============================================================================
# SECURITY SETTINGS
# =============================================================================

SECRET_KEY = config('SECRET_KEY', default='django-insecure-dedn-toolkit-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# =============================================================================
# APPLICATION DEFINITION
# =============================================================================

INSTALLED_APPS = [
    # Django core apps
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Third-party apps
    'rest_framework',

    # Local apps
    'zsl',
]


# =============================================================================
# DATABASE CONFIGURATION
# =============================================================================
# Nothing is persisted in a database; SQLite keeps the test runner happy.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# =============================================================================
# INTERNATIONALIZATION
# =============================================================================

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# =============================================================================
# DEDN TOOLKIT CONFIGURATION
# =============================================================================

DEDN = {
    # Training defaults; a --config file and CLI flags override these
    'TRAIN': {
        'lr': 1e-4,
        'batch_size': 50,
        'momentum': 0.9,
        'smoothing_alpha': 0.99,
        'eps': 1e-8,
        'weight_decay': 1e-4,
        'epochs': 200,
        'seed': 0,
        'weights': {
            'beta': 0.001,      # alignment
            'gamma': 0.1,       # distillation
            'epsilon': 1.0,     # MAL margin
        },
        'lambda_rc': 0.8,
        'lambda_e': 0.9,
        'classification_loss': 'mal',
        'channel_attention': True,
        'normalize_features': False,
    },

    # Desk-scale synthetic bundle
    'SYNTH': {
        'n_per_class': 20,
        'k_seen': 10,
        'k_unseen': 5,
        'c': 8,
        'h': 3,
        'w': 3,
        'd': 12,
        'g': 6,
        'noise_sigma': 0.1,
        'seed': 0,
        'train_fraction': 0.8,
        'class_separation': 4,
        'unseen_separation': 6,
    },

    # Attribute clustering
    'KMEANS': {
        'max_iters': 100,
        'tol': 1e-6,
        'unit_norm': False,
    },

    # Finite-difference suite
    'GRADCHECK': {
        'step': 1e-3,
        'tolerance': 1e-4,
    },

    # Attention-map CSV
    'EXPORT': {
        'significant_digits': 6,
    },

    # Model file layout
    'CHECKPOINT': {
        'magic': b'DEDN',
        'version': 1,
    },
}


# =============================================================================
# LOGGING CONFIGURATION
# =============================================================================

DEDN_LOG_LEVEL = config('DEDN_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'zsl': {
            'handlers': ['console'],
            'level': DEDN_LOG_LEVEL,
            'propagate': False,
        },
    },
}
