"""
Django settings for vmc_desk project.

Generated by 'django-admin startproject' using Django 3.2.25 and carried
forward to Django 4.2.

For more information on this file, see
https://docs.djangoproject.com/en/4.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""
import os
import dj_database_url
if os.path.isfile('env.py'):
    import env  # noqa: F401  local overrides of the environment variables below

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('SECRET_KEY', 'django-insecure-vmc-desk-local-only')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = 'DEVELOPMENT' in os.environ

ALLOWED_HOSTS = [
    '127.0.0.1',
    'localhost',
]


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    'schedule',
    'conditioning',
    'denoiser',
    'diffusion',
    'motion',
    'corpus',
    'cascade',
    'metrics',
    'runs',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'vmc_desk.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'vmc_desk.wsgi.application'


# Database
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases

if 'DATABASE_URL' in os.environ:
    DATABASES = {
        'default': dj_database_url.parse(os.environ.get('DATABASE_URL'))
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
        }
    }


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


STATIC_URL = '/static/'

# Default primary key field type
# https://docs.djangoproject.com/en/4.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

VMC_LOG_LEVEL = os.environ.get('VMC_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': VMC_LOG_LEVEL,
            'propagate': False,
        }
        for app in (
            'schedule', 'conditioning', 'denoiser', 'diffusion', 'motion',
            'corpus', 'cascade', 'metrics', 'runs', 'vmc_desk',
        )
    },
}


# Run directories and artifacts

VMC_RUNS_ROOT = Path(os.environ.get('VMC_RUNS_ROOT', BASE_DIR / 'runs_output'))

# Training-curve and end-to-end experiments take minutes.
VMC_SLOW_TESTS = 'VMC_SLOW_TESTS' in os.environ


# Model, training and evaluation constants.
# A JSON file passed with --config is deep-merged over this dict.

VMC = {
    'schedule': {
        # stand-in for the backbone's unpublished schedule
        'T': 100,
        'beta_start': 1e-4,
        'beta_end': 0.02,
    },
    'denoiser': {
        'frame_size': 16,
        'patch_size': 4,
        'hidden_dim': 64,
        'n_blocks': 2,
        'cond_dim': 28,
        'time_embed_dim': 32,
        'mlp_ratio': 2,
        'max_frames': 32,
    },
    'corpus': {
        'frame_count': 8,
        'frame_size': 16,
        'train_clips': 512,
        'pixel_noise': 0.0,
    },
    'base_training': {
        'steps': 6000,
        'batch_size': 16,
        'learning_rate': 1e-4,
        'weight_decay': 0.01,
        'cond_drop_prob': 0.3,
        'log_every': 100,
    },
    'adaptation': {
        'steps': 400,
        'learning_rate': 1e-4,
        'weight_decay': 0.01,
        'loss': 'cos',
        'labels': ['temporal_attention'],
        'stride': 1,
        'log_every': 50,
    },
    'sampler': {
        'eta': 0.0,
        'steps': 50,
        'frame_count': 8,
    },
    'interpolation': {
        'steps': 4000,
        'batch_size': 16,
        'learning_rate': 1e-4,
        'weight_decay': 0.01,
        'sampling_steps': 25,
        'train_clips': 256,
        'log_every': 100,
    },
    'upscaler': {
        'channels': 32,
        'steps': 2000,
        'batch_size': 32,
        'learning_rate': 1e-3,
        'weight_decay': 0.01,
        'train_clips': 128,
        'log_every': 100,
    },
    'classifier': {
        'hidden_dim': 128,
        'steps': 1500,
        'batch_size': 32,
        'learning_rate': 1e-3,
        'weight_decay': 0.01,
        'train_clips': 512,
        'heldout_clips': 128,
        'min_accuracy': 0.95,
        'log_every': 100,
    },
    'pipeline': {
        'inversion_steps': 50,
        'invert_with': 'invariant',
    },
    'metrics': {
        'foreground_threshold': 0.5,
        'motion_threshold': 0.8,
        'alignment_threshold': 0.7,
        'adaptation_margin': 0.15,
    },
}
