"""
Checkpoint container: `weights.pt` holds named float32 tensors, and
`manifest.json` holds shapes, partition labels, the module config, a
content hash and optional provenance.
"""
import hashlib
import json
import logging
from pathlib import Path

import torch
from django.utils.module_loading import import_string

from vmc_desk.errors import CheckpointError

from .network import label_for

logger = logging.getLogger(__name__)

WEIGHTS_FILE = 'weights.pt'
MANIFEST_FILE = 'manifest.json'

# kind -> (module class, config class)
CHECKPOINT_KINDS = {
    'denoiser': ('denoiser.network.Denoiser', 'denoiser.network.DenoiserConfig'),
    'interpolator': ('denoiser.network.Denoiser', 'denoiser.network.DenoiserConfig'),
    'upscaler': ('cascade.upscaler.Upscaler', 'cascade.upscaler.UpscalerConfig'),
    'classifier': ('metrics.classifier.FactorClassifier', 'metrics.classifier.ClassifierConfig'),
}


def _tensor_bytes(tensor):
    return tensor.detach().cpu().contiguous().numpy().tobytes()


def content_hash(tensors):
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode())
        digest.update(_tensor_bytes(tensors[name]))
    return digest.hexdigest()


def parameter_hashes(module):
    """
    sha256 of every parameter in its native dtype, keyed by name
    """
    return {
        name: hashlib.sha256(_tensor_bytes(p)).hexdigest()
        for name, p in module.named_parameters()
    }


def module_hash(module):
    return content_hash({name: p for name, p in module.named_parameters()})


def save_checkpoint(module, directory, kind, provenance=None):
    if kind not in CHECKPOINT_KINDS:
        raise CheckpointError(f'Unknown checkpoint kind "{kind}"')
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {
        name: value.detach().to(torch.float32).contiguous()
        for name, value in module.state_dict().items()
    }
    manifest = {
        'kind': kind,
        'config': module.config.to_dict(),
        'tensors': {
            name: {'shape': list(value.shape), 'label': label_for(name).value}
            for name, value in tensors.items()
        },
        'content_hash': content_hash(tensors),
        'provenance': provenance or {},
    }
    torch.save(tensors, directory / WEIGHTS_FILE)
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info('Saved %s checkpoint %s (%s)', kind, directory, manifest['content_hash'][:12])
    return manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST_FILE
    if not path.is_file():
        raise CheckpointError(f'No checkpoint manifest at {path}')
    return json.loads(path.read_text())


def load_checkpoint(directory, expected_kind=None, expected_hash=None):
    """
    Rebuild the module stored in `directory`, verifying its content hash
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    kind = manifest.get('kind')
    if expected_kind and kind != expected_kind:
        raise CheckpointError(f'{directory} holds a {kind} checkpoint, expected {expected_kind}')
    if kind not in CHECKPOINT_KINDS:
        raise CheckpointError(f'Unknown checkpoint kind "{kind}" in {directory}')
    weights_path = directory / WEIGHTS_FILE
    if not weights_path.is_file():
        raise CheckpointError(f'Missing weights file {weights_path}')

    tensors = torch.load(weights_path, map_location='cpu', weights_only=True)
    digest = content_hash(tensors)
    if digest != manifest['content_hash']:
        raise CheckpointError(f'Content hash mismatch in {directory}: manifest {manifest["content_hash"][:12]}, weights {digest[:12]}')
    if expected_hash and digest != expected_hash:
        raise CheckpointError(f'Checkpoint {directory} has hash {digest[:12]}, expected {expected_hash[:12]}')

    module_path, config_path = CHECKPOINT_KINDS[kind]
    config = import_string(config_path).from_dict(manifest['config'])
    module = import_string(module_path)(config)
    module.load_state_dict(tensors)
    module.eval()
    return module, manifest
