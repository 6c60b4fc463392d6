import json
from dataclasses import dataclass, replace

import torch

from vmc_desk.errors import ConfigError, UnknownCategoryError

from .vocabulary import APPEARANCE_GROUPS, BACKGROUND_GROUPS, MOTIONS, group_of


def _block_layout():
    """
    Offsets of every group inside the embedding, motion first
    """
    layout = {'motion': (0, len(MOTIONS))}
    offset = len(MOTIONS)
    for group, names in APPEARANCE_GROUPS + BACKGROUND_GROUPS:
        layout[group] = (offset, offset + len(names))
        offset += len(names)
    return layout, offset


BLOCKS, EMBEDDING_DIM = _block_layout()
MOTION_BLOCK = slice(*BLOCKS['motion'])
APPEARANCE_BLOCK = slice(BLOCKS['shape'][0], BLOCKS['intensity'][1])
BACKGROUND_BLOCK = slice(BLOCKS['texture'][0], BLOCKS['level'][1])


@dataclass(frozen=True)
class StructuredPrompt:
    """
    Factored stand-in for a text prompt: a motion class plus optional
    appearance (shape, intensity band) and background (texture, level)
    attributes.
    """
    motion: str
    appearance: tuple = ()
    background: tuple = ()

    def __post_init__(self):
        if not self.motion:
            raise ConfigError('A prompt always names a motion class')
        object.__setattr__(self, 'appearance', tuple(self.appearance))
        object.__setattr__(self, 'background', tuple(self.background))

    def __str__(self):
        parts = [self.motion]
        if self.appearance:
            parts.append(' '.join(self.appearance))
        if self.background:
            parts.append('on ' + ' '.join(self.background))
        return ' | '.join(parts)

    def attribute(self, group):
        """
        The attribute of `group` ('shape', 'intensity', 'texture', 'level'), if any
        """
        for name in self.appearance + self.background:
            found = group_of(name, APPEARANCE_GROUPS + BACKGROUND_GROUPS)
            if found and found[0] == group:
                return name
        return None

    def to_dict(self):
        return {
            'motion': self.motion,
            'appearance': list(self.appearance),
            'background': list(self.background),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                motion=data['motion'],
                appearance=tuple(data.get('appearance', ())),
                background=tuple(data.get('background', ())),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f'Invalid prompt {data!r}: {e}') from e

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Prompt is not valid JSON: {e}') from e
        return cls.from_dict(data)


@dataclass(frozen=True, eq=False)
class Conditioning:
    """
    The conditioning vector c fed to the denoiser
    """
    embedding: torch.Tensor

    def as_tensor(self, dtype=torch.float32):
        return self.embedding.to(dtype)


def _set_attributes(embedding, names, groups, block_name):
    for name in names:
        found = group_of(name, groups)
        if found is None:
            raise UnknownCategoryError(f'"{name}" is not a known {block_name} attribute')
        group, index = found
        embedding[BLOCKS[group][0] + index] = 1.0


def encode_prompt(p):
    """
    Deterministic block one-hot encoding; empty attribute lists give
    all-zero blocks.
    """
    if p.motion not in MOTIONS:
        raise UnknownCategoryError(f'"{p.motion}" is not a known motion class')
    embedding = torch.zeros(EMBEDDING_DIM, dtype=torch.float64)
    embedding[BLOCKS['motion'][0] + MOTIONS.index(p.motion)] = 1.0
    _set_attributes(embedding, p.appearance, APPEARANCE_GROUPS, 'appearance')
    _set_attributes(embedding, p.background, BACKGROUND_GROUPS, 'background')
    return Conditioning(embedding=embedding)


def encode_prompts(prompts, dtype=torch.float32):
    """
    Stack the embeddings of several prompts into a (B, EMBEDDING_DIM) tensor
    """
    return torch.stack([encode_prompt(p).as_tensor(dtype) for p in prompts])


def appearance_invariant(p):
    """
    Strip appearance and background information, keeping the motion class
    """
    return replace(p, appearance=(), background=())


def is_appearance_invariant(p):
    return not p.appearance and not p.background
