from django.db.models.signals import post_delete, post_save
from django.dispatch import receiver

from .models import Artifact, Run


@receiver(post_save, sender=Run)
def write_manifest_on_run_save(sender, instance, created, **kwargs):
    """
    Keep manifest.json in step with the run's status and timings
    """
    instance.write_manifest()


@receiver(post_save, sender=Artifact)
def update_on_save(sender, instance, created, **kwargs):
    """
    Rewrite the run manifest on artifact update/create
    """
    instance.run.write_manifest()


@receiver(post_delete, sender=Artifact)
def update_on_delete(sender, instance, **kwargs):
    """
    Rewrite the run manifest on artifact delete
    """
    instance.run.write_manifest()
