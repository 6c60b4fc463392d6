"""
Frozen spatial super-resolution stage: 2x per axis.

The network only predicts detail. Its output is
nearest_up(x) + r - nearest_up(avg_pool(r)), where r comes from a bias-free
convolution stack applied to a high-pass of the upsampled input, so
2x2 average pooling of the result gives back x and constant frames stay
constant.
"""
import logging
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from django.conf import settings
from torch import nn

from corpus.generator import build_corpus, render_frames
from diffusion.training import TrainingResult
from diffusion.video import model_dtype
from vmc_desk.config import section_kwargs
from vmc_desk.errors import InvalidRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

FACTOR = 2


@dataclass(frozen=True)
class UpscalerConfig:
    channels: int = 32
    frame_size: int = 16

    def __post_init__(self):
        if self.channels < 1 or self.frame_size < 1:
            raise InvalidRangeError('Upscaler channels and frame_size must be >= 1')

    @property
    def frame_dim(self):
        return self.frame_size * self.frame_size

    @property
    def output_size(self):
        return self.frame_size * FACTOR

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**section_kwargs(data, cls.__dataclass_fields__))


@dataclass(frozen=True)
class UpscalerTrainingConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    train_clips: int = 128
    log_every: int = 100

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.train_clips) < 1:
            raise InvalidRangeError('Upscaler steps, batch size and clip count must be >= 1')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


def downsample(frames):
    """
    2x2 average pooling of (B, 1, H, W) images
    """
    return F.avg_pool2d(frames, FACTOR)


def nearest_up(frames):
    return F.interpolate(frames, scale_factor=FACTOR, mode='nearest')


def high_pass(frames):
    blurred = F.avg_pool2d(F.pad(frames, (1, 1, 1, 1), mode='replicate'), 3, stride=1)
    return frames - blurred


class Upscaler(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        width = config.channels
        self.detail = nn.Sequential(
            nn.Conv2d(1, width, 3, padding=1, bias=False),
            nn.GELU(),
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            nn.GELU(),
            nn.Conv2d(width, 1, 3, padding=1, bias=False),
        )

    def forward(self, video):
        """
        (N, d) or (B, N, d) frames -> the same layout at 4x the pixels
        """
        side = self.config.frame_size
        if video.shape[-1] != self.config.frame_dim:
            raise ShapeMismatchError(
                f'Upscaler expects {side}x{side} frames ({self.config.frame_dim} pixels), got {video.shape[-1]}')
        lead = video.shape[:-1]
        images = video.to(model_dtype(self)).reshape(-1, 1, side, side)
        up = nearest_up(images)
        r = self.detail(high_pass(up))
        out = up + r - nearest_up(downsample(r))
        return out.reshape(*lead, self.config.output_size ** 2)


def init_upscaler(cfg, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Upscaler(cfg)


def upscaler_pairs(records, frame_size=16):
    """
    (low, high) frame pairs: high-resolution renders and their 2x2 averages
    """
    highs = []
    for record in records:
        prompt = record.prompt
        appearance = (prompt.attribute('shape'), prompt.attribute('intensity'))
        background = (prompt.attribute('texture'), prompt.attribute('level'))
        highs.append(render_frames(record.motion, appearance, background, range(record.video.shape[0]),
                                   scale=FACTOR, seed=record.seed, frame_size=frame_size))
    high = torch.cat(highs)
    side = frame_size * FACTOR
    low = downsample(high.reshape(-1, 1, side, side)).reshape(high.shape[0], -1)
    return low, high


def train_upscaler(cfg, seed, upscaler_config=None, frame_count=8):
    upscaler_config = upscaler_config or UpscalerConfig.from_dict(settings.VMC['upscaler'])
    records = build_corpus(cfg.train_clips, seed=seed, frame_count=frame_count,
                           frame_size=upscaler_config.frame_size)
    low, high = upscaler_pairs(records, upscaler_config.frame_size)
    logger.info('Training upscaler on %d frames', len(low))

    params = init_upscaler(upscaler_config, seed)
    params.train()
    optimizer = torch.optim.AdamW(params.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for step in range(1, cfg.steps + 1):
        index = torch.randint(len(low), (cfg.batch_size,), generator=gen)
        loss = ((params(low[index]) - high[index]) ** 2).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if step % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('sr step %d/%d: loss %.5f', step, cfg.steps, sum(recent) / len(recent))
    params.eval()
    return TrainingResult(params=params, losses=losses)


@torch.no_grad()
def super_resolve(video, sr_params):
    return sr_params(video)
