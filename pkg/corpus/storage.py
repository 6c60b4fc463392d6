"""
Clip container: `<stem>.bin` holds row-major little-endian float32 frames
and `<stem>.json` the header {N, d, height, width, prompt, seed,
generator_version, ...}. A corpus directory adds `index.jsonl`, one line
per clip.
"""
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from conditioning.prompts import StructuredPrompt
from vmc_desk.errors import CheckpointError, EmptyCorpusError

from .generator import GENERATOR_VERSION, ClipRecord, MotionSpec

logger = logging.getLogger(__name__)

INDEX_FILE = 'index.jsonl'
CLIP_DIR = 'clips'


def save_video(stem, video, prompt=None, seed=None, **extra):
    """
    Write a video (or latent) container; returns the path of the .bin file
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    frames = video.detach().cpu().to(torch.float32).contiguous()
    count, dim = frames.shape
    side = math.isqrt(dim)
    header = {
        'N': count,
        'd': dim,
        'height': side if side * side == dim else None,
        'width': side if side * side == dim else None,
        'prompt': prompt.to_dict() if prompt is not None else None,
        'seed': seed,
        'generator_version': GENERATOR_VERSION,
        **extra,
    }
    bin_path = stem.with_suffix('.bin')
    frames.numpy().astype('<f4').tofile(bin_path)
    stem.with_suffix('.json').write_text(json.dumps(header, indent=2, sort_keys=True))
    return bin_path


def load_video(stem):
    """
    Read a container back as ((N, d) float32 tensor, header dict)
    """
    stem = Path(stem)
    if stem.suffix in ('.bin', '.json'):
        stem = stem.with_suffix('')
    header_path, bin_path = stem.with_suffix('.json'), stem.with_suffix('.bin')
    if not header_path.is_file() or not bin_path.is_file():
        raise CheckpointError(f'No video container at {stem}')
    header = json.loads(header_path.read_text())
    data = np.fromfile(bin_path, dtype='<f4')
    if data.size != header['N'] * header['d']:
        raise CheckpointError(f'{bin_path} holds {data.size} values, header says {header["N"]}x{header["d"]}')
    return torch.from_numpy(data.reshape(header['N'], header['d']).astype(np.float32)), header


def save_clip(directory, record):
    stem = Path(directory) / CLIP_DIR / record.clip_id
    return save_video(stem, record.video, record.prompt, record.seed,
                      clip_id=record.clip_id, split=record.split, motion=record.motion.to_dict())


def load_clip(path):
    video, header = load_video(path)
    return ClipRecord(
        clip_id=header['clip_id'],
        video=video,
        prompt=StructuredPrompt.from_dict(header['prompt']),
        motion=MotionSpec.from_dict(header['motion']),
        seed=header['seed'],
        split=header.get('split', 'train'),
    )


def write_corpus(directory, records):
    """
    Write every clip plus the JSON-lines index
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / INDEX_FILE).open('w') as index:
        for record in records:
            path = save_clip(directory, record)
            entry = {
                'clip_id': record.clip_id,
                'split': record.split,
                'path': str(path.relative_to(directory)),
                'prompt': record.prompt.to_dict(),
                'seed': record.seed,
            }
            index.write(json.dumps(entry, sort_keys=True) + '\n')
    logger.info('Wrote %d clips to %s', len(records), directory)
    return directory / INDEX_FILE


def read_index(directory):
    path = Path(directory) / INDEX_FILE
    if not path.is_file():
        raise EmptyCorpusError(f'No corpus index at {path}')
    with path.open() as handle:
        return [json.loads(line) for line in handle if line.strip()]


def read_corpus(directory, split=None):
    """
    Load the clips of a corpus directory, optionally only one split
    """
    directory = Path(directory)
    entries = [e for e in read_index(directory) if split is None or e['split'] == split]
    if not entries:
        where = f' in split {split}' if split else ''
        raise EmptyCorpusError(f'Corpus {directory} has no clips{where}')
    return [load_clip(directory / entry['path']) for entry in entries]


def find_clip(directory, clip_id):
    """
    Load one clip by id, or from a container path
    """
    candidate = Path(clip_id)
    if candidate.with_suffix('.json').is_file():
        return load_clip(candidate)
    for entry in read_index(directory):
        if entry['clip_id'] == clip_id:
            return load_clip(Path(directory) / entry['path'])
    raise CheckpointError(f'Clip "{clip_id}" is not in corpus {directory}')
