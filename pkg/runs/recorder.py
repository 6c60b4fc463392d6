"""
Run directories and their provenance records.

Every management command runs inside a RunRecorder: it creates the Run row
and its directory, stores the effective config next to the outputs, and
registers every file it reads or writes as an Artifact. The manifest is
rewritten by signals whenever any of that changes.
"""
import json
import logging
import subprocess
import time
from contextlib import contextmanager
from pathlib import Path

from django.conf import settings
from django.utils import timezone

from denoiser.checkpoints import read_manifest

from .models import Artifact, Run

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'


def git_describe():
    try:
        completed = subprocess.run(
            ['git', 'describe', '--always', '--dirty', '--tags'],
            cwd=settings.BASE_DIR, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return 'unknown'
    return completed.stdout.strip() if completed.returncode == 0 else 'unknown'


class RunRecorder:

    def __init__(self, command, options, config, seed=None, run_dir=None, runs_root=None):
        self.command = command
        self.options = options
        self.config = config
        self.seed = seed
        self.requested_dir = run_dir
        self.runs_root = Path(runs_root or settings.VMC_RUNS_ROOT)
        self.run = None

    def __enter__(self):
        self.run = Run.objects.create(
            command=self.command, seed=self.seed, options=self.options,
            config=self.config, git_describe=git_describe(),
        )
        directory = Path(self.requested_dir or self.runs_root / f'{self.command}-{self.run.run_id[:8]}')
        directory.mkdir(parents=True, exist_ok=True)
        (directory / CONFIG_FILE).write_text(json.dumps(self.config, indent=2, sort_keys=True))
        self.run.run_dir = str(directory)
        self.run.save()
        logger.info('Run %s (%s) in %s', self.run.run_id, self.command, directory)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.run.finished = timezone.now()
        if exc is None:
            self.run.status = Run.SUCCEEDED
        else:
            self.run.status = Run.FAILED
            self.run.error = f'{exc_type.__name__}: {exc}'
        self.run.save()
        return False

    @property
    def directory(self):
        return Path(self.run.run_dir)

    def path(self, name):
        return self.directory / name

    def _record(self, role, path, kind, name=None, content_hash=''):
        path = Path(path)
        if kind == 'checkpoint' and not content_hash:
            content_hash = read_manifest(path)['content_hash']
        artifact = Artifact.objects.create(
            run=self.run, role=role, kind=kind, name=name or path.name,
            path=str(path), content_hash=content_hash,
        )
        logger.info('%s %s %s (%s)', role.capitalize(), kind, path, artifact.sha256[:12])
        return artifact

    def consumed(self, path, kind, name=None, content_hash=''):
        return self._record(Artifact.CONSUMED, path, kind, name, content_hash)

    def produced(self, path, kind, name=None, content_hash=''):
        return self._record(Artifact.PRODUCED, path, kind, name, content_hash)

    @contextmanager
    def timed(self, stage):
        started = time.perf_counter()
        try:
            yield
        finally:
            self.run.timings = {**self.run.timings, stage: time.perf_counter() - started}
            self.run.save()
