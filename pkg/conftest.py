"""Run the Django test modules (``<app>/tests.py``) under plain pytest.

Mirrors what ``manage.py test`` does: configure settings, set up the test
environment and create the test database before any test runs.
"""
import os

import django


def pytest_configure(config):
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'vmc_desk.settings')
    django.setup()


_runner = None
_old_config = None


def pytest_sessionstart(session):
    global _runner, _old_config
    from django.test.runner import DiscoverRunner

    _runner = DiscoverRunner(verbosity=0, interactive=False)
    _runner.setup_test_environment()
    _old_config = _runner.setup_databases()


def pytest_sessionfinish(session, exitstatus):
    if _runner is not None:
        _runner.teardown_databases(_old_config)
        _runner.teardown_test_environment()
