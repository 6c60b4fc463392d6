import hashlib
import json
import uuid
from pathlib import Path

from django.db import models


def file_sha256(path):
    """
    sha256 of a file, or of a directory's files taken in sorted order
    """
    path = Path(path)
    digest = hashlib.sha256()
    files = sorted(p for p in path.rglob('*') if p.is_file()) if path.is_dir() else [path]
    for file in files:
        if path.is_dir():
            digest.update(str(file.relative_to(path)).encode())
        digest.update(file.read_bytes())
    return digest.hexdigest()


class Run(models.Model):
    RUNNING = 'running'
    SUCCEEDED = 'succeeded'
    FAILED = 'failed'
    STATUS_CHOICES = [
        (RUNNING, 'Running'),
        (SUCCEEDED, 'Succeeded'),
        (FAILED, 'Failed'),
    ]

    run_id = models.CharField(max_length=32, null=False, editable=False)
    command = models.CharField(max_length=40, null=False, blank=False)
    seed = models.IntegerField(null=True, blank=True)
    options = models.JSONField(default=dict)
    config = models.JSONField(default=dict)
    git_describe = models.CharField(max_length=80, blank=True, default='')
    run_dir = models.CharField(max_length=500, blank=True, default='')
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default=RUNNING)
    error = models.TextField(blank=True, default='')
    started = models.DateTimeField(auto_now_add=True)
    finished = models.DateTimeField(null=True, blank=True)
    timings = models.JSONField(default=dict)

    def _generate_run_id(self):
        """
        Generate a random, unique run id using UUID
        """
        return uuid.uuid4().hex

    def save(self, *args, **kwargs):
        """
        Override the original save method to set the run id
        if it hasn't been set already.
        """
        if not self.run_id:
            self.run_id = self._generate_run_id()
        super().save(*args, **kwargs)

    def manifest(self):
        artifacts = list(self.artifacts.order_by('id'))
        return {
            'run_id': self.run_id,
            'command': self.command,
            'seed': self.seed,
            'options': self.options,
            'config': self.config,
            'git_describe': self.git_describe,
            'status': self.status,
            'error': self.error,
            'started': self.started.isoformat() if self.started else None,
            'finished': self.finished.isoformat() if self.finished else None,
            'timings': self.timings,
            'consumed': [a.as_dict() for a in artifacts if a.role == Artifact.CONSUMED],
            'produced': [a.as_dict() for a in artifacts if a.role == Artifact.PRODUCED],
        }

    def write_manifest(self):
        """
        Rewrite manifest.json in the run directory
        """
        if not self.run_dir:
            return None
        path = Path(self.run_dir) / 'manifest.json'
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return path

    def __str__(self):
        return f'{self.command} {self.run_id[:8]}'


class Artifact(models.Model):
    CONSUMED = 'consumed'
    PRODUCED = 'produced'
    ROLE_CHOICES = [
        (CONSUMED, 'Consumed'),
        (PRODUCED, 'Produced'),
    ]

    run = models.ForeignKey(Run, null=False, blank=False, on_delete=models.CASCADE, related_name='artifacts')
    role = models.CharField(max_length=10, choices=ROLE_CHOICES)
    kind = models.CharField(max_length=20)  # checkpoint, corpus, clip, video, csv, json, markdown, image
    name = models.CharField(max_length=100)
    path = models.CharField(max_length=500)
    sha256 = models.CharField(max_length=64, editable=False)
    content_hash = models.CharField(max_length=64, blank=True, default='')

    def save(self, *args, **kwargs):
        """
        Override the original save method to hash the file
        if it hasn't been hashed already.
        """
        if not self.sha256:
            self.sha256 = file_sha256(self.path)
        super().save(*args, **kwargs)

    def as_dict(self):
        entry = {'name': self.name, 'kind': self.kind, 'path': self.path, 'sha256': self.sha256}
        if self.content_hash:
            entry['content_hash'] = self.content_hash
        return entry

    def __str__(self):
        return f'{self.role} {self.kind} {self.name} on run {self.run.run_id[:8]}'
