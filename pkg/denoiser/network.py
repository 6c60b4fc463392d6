"""
Toy noise-prediction network eps_theta(v_t, t, c).

Frames are cut into square patches (tokens). Each block runs spatial
self-attention over the tokens of one frame, then temporal attention over
the frames at one token position, then a per-token MLP. Time and
conditioning embeddings are added to every token.
"""
import math
import re
from dataclasses import asdict, dataclass
from enum import Enum

import torch
from torch import nn

from vmc_desk.config import section_kwargs
from vmc_desk.errors import InvalidRangeError, ShapeMismatchError


class ParameterLabel(str, Enum):
    TEMPORAL_ATTENTION = 'temporal_attention'
    SPATIAL_ATTENTION = 'spatial_attention'
    CONDITIONING = 'conditioning'
    OTHER = 'other'


LABEL_RULES = (
    (re.compile(r'^blocks\.\d+\.temporal_attn\.to_[qkv]\.weight$'), ParameterLabel.TEMPORAL_ATTENTION),
    (re.compile(r'^blocks\.\d+\.spatial_attn\.to_[qkv]\.weight$'), ParameterLabel.SPATIAL_ATTENTION),
    (re.compile(r'^cond_proj\.'), ParameterLabel.CONDITIONING),
)


def label_for(name):
    for pattern, label in LABEL_RULES:
        if pattern.search(name):
            return label
    return ParameterLabel.OTHER


def parse_labels(values):
    """
    Turn label names from config ('temporal_attention', ...) into labels
    """
    try:
        return frozenset(ParameterLabel(value) for value in values)
    except ValueError as e:
        raise InvalidRangeError(f'Unknown parameter label in {list(values)}') from e


@dataclass(frozen=True)
class DenoiserConfig:
    frame_size: int = 16
    patch_size: int = 4
    hidden_dim: int = 64
    n_blocks: int = 2
    cond_dim: int = 28
    time_embed_dim: int = 32
    mlp_ratio: int = 2
    max_frames: int = 32

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise InvalidRangeError(f'Denoiser {name} must be >= 1, got {value}')
        if self.frame_size % self.patch_size:
            raise InvalidRangeError('frame_size must be a multiple of patch_size')
        if self.time_embed_dim % 2:
            raise InvalidRangeError('time_embed_dim must be even')

    @property
    def frame_dim(self):
        return self.frame_size * self.frame_size

    @property
    def tokens_per_frame(self):
        return (self.frame_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**section_kwargs(data, cls.__dataclass_fields__))


def sinusoidal_embedding(positions, dim):
    """
    (B,) positions -> (B, dim) sin/cos features
    """
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(positions.dtype)
    angles = positions[:, None] * freqs[None, :]
    return torch.cat([angles.sin(), angles.cos()], dim=-1)


def attend(q, k, v):
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return scores.softmax(dim=-1) @ v


class SelfAttention(nn.Module):
    """
    Single-head pre-norm self-attention with a residual connection,
    attending over the second-to-last axis.
    """

    def __init__(self, hidden_dim):
        super().__init__()
        self.norm = nn.LayerNorm(hidden_dim)
        self.to_q = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.to_k = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.to_v = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.to_out = nn.Linear(hidden_dim, hidden_dim)

    def mix(self, x):
        return self.to_out(attend(self.to_q(x), self.to_k(x), self.to_v(x)))


class SpatialAttention(SelfAttention):

    def forward(self, h):
        # (B, N, P, H): tokens of one frame attend to each other
        return h + self.mix(self.norm(h))


class TemporalAttention(SelfAttention):

    def __init__(self, hidden_dim, max_frames):
        super().__init__(hidden_dim)
        positions = torch.arange(max_frames, dtype=torch.float64)
        self.register_buffer('frame_position', sinusoidal_embedding(positions, hidden_dim).float(), persistent=False)

    def forward(self, h):
        # (B, N, P, H) -> (B, P, N, H): one token position across frames
        frames = h.shape[1]
        x = self.norm(h) + self.frame_position[:frames].to(h.dtype)[None, :, None, :]
        mixed = self.mix(x.transpose(1, 2)).transpose(1, 2)
        return h + mixed


class DenoiserBlock(nn.Module):

    def __init__(self, config):
        super().__init__()
        width = config.hidden_dim
        self.spatial_attn = SpatialAttention(width)
        self.temporal_attn = TemporalAttention(width, config.max_frames)
        self.mlp_norm = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * config.mlp_ratio),
            nn.GELU(),
            nn.Linear(width * config.mlp_ratio, width),
        )

    def forward(self, h):
        h = self.spatial_attn(h)
        h = self.temporal_attn(h)
        return h + self.mlp(self.mlp_norm(h))


class Denoiser(nn.Module):
    """
    Predicts the noise of every frame of a noisy video.

    Parameters carry one ParameterLabel each (see `partition`); the
    temporal-attention Q/K/V projections are the set adapted to a motion.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        width = config.hidden_dim
        self.patch_embed = nn.Linear(config.patch_dim, width)
        self.token_position = nn.Parameter(torch.randn(config.tokens_per_frame, width) * 0.02)
        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_embed_dim, width),
            nn.SiLU(),
            nn.Linear(width, width),
        )
        self.cond_proj = nn.Linear(config.cond_dim, width)
        self.blocks = nn.ModuleList([DenoiserBlock(config) for _ in range(config.n_blocks)])
        self.out_norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, config.patch_dim)

    def patchify(self, frames):
        batch, count, _ = frames.shape
        side, patch = self.config.frame_size, self.config.patch_size
        grid = side // patch
        x = frames.reshape(batch, count, grid, patch, grid, patch)
        return x.permute(0, 1, 2, 4, 3, 5).reshape(batch, count, grid * grid, patch * patch)

    def unpatchify(self, tokens):
        batch, count = tokens.shape[:2]
        side, patch = self.config.frame_size, self.config.patch_size
        grid = side // patch
        x = tokens.reshape(batch, count, grid, grid, patch, patch)
        return x.permute(0, 1, 2, 4, 3, 5).reshape(batch, count, side * side)

    def _prepare(self, v_t, t, c):
        dtype = self.head.weight.dtype
        unbatched = v_t.dim() == 2
        if unbatched:
            v_t = v_t.unsqueeze(0)
        if v_t.dim() != 3 or v_t.shape[-1] != self.config.frame_dim:
            raise ShapeMismatchError(
                f'Expected a video of shape (N, {self.config.frame_dim}), got {tuple(v_t.shape)}')
        if v_t.shape[1] < 2 or v_t.shape[1] > self.config.max_frames:
            raise ShapeMismatchError(f'Frame count {v_t.shape[1]} outside [2, {self.config.max_frames}]')
        batch = v_t.shape[0]

        t = torch.as_tensor(t, dtype=dtype).reshape(-1)
        if t.numel() == 1:
            t = t.expand(batch)
        if t.numel() != batch:
            raise ShapeMismatchError(f'{t.numel()} timesteps for a batch of {batch}')

        c = getattr(c, 'embedding', c)
        c = torch.as_tensor(c).to(dtype)
        if c.dim() == 1:
            c = c.unsqueeze(0).expand(batch, -1)
        if c.shape != (batch, self.config.cond_dim):
            raise ShapeMismatchError(f'Conditioning shape {tuple(c.shape)} does not match ({batch}, {self.config.cond_dim})')
        return v_t.to(dtype), t, c, unbatched

    def forward(self, v_t, t, c):
        v_t, t, c, unbatched = self._prepare(v_t, t, c)
        h = self.patch_embed(self.patchify(v_t)) + self.token_position
        context = self.time_mlp(sinusoidal_embedding(t, self.config.time_embed_dim)) + self.cond_proj(c)
        h = h + context[:, None, None, :]
        for block in self.blocks:
            h = block(h)
        eps = self.unpatchify(self.head(self.out_norm(h)))
        return eps[0] if unbatched else eps

    def partition(self):
        return {name: label_for(name) for name, _ in self.named_parameters()}

    def labelled_parameters(self, labels):
        return [(name, p) for name, p in self.named_parameters() if label_for(name) in labels]


def init_denoiser(cfg, seed):
    """
    Build a Denoiser whose weights depend only on (cfg, seed)
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Denoiser(cfg)


def predict_noise(params, v_t, t, c):
    return params(v_t, t, c)
