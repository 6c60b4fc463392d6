"""
Frozen temporal-interpolation stage: a small diffusion model over 5-frame
windows whose first and last slots hold clean keyframes and whose three
middle slots are generated. Eight keyframes become 29 frames.
"""
import logging
from dataclasses import asdict, dataclass

import torch
from django.conf import settings

from conditioning.prompts import EMBEDDING_DIM
from corpus.generator import build_corpus, render_frames
from denoiser.network import DenoiserConfig, init_denoiser
from diffusion.sampling import ddim_step, timestep_grid
from diffusion.training import TrainingResult
from diffusion.video import model_dtype, validate_video
from schedule.kernels import forward_sample, schedule_from_config
from vmc_desk.config import section_kwargs
from vmc_desk.errors import InvalidRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

KEYFRAME_COUNT = 8
INSERTED_PER_GAP = 3
WINDOW = INSERTED_PER_GAP + 2
OUTPUT_FRAMES = KEYFRAME_COUNT + (KEYFRAME_COUNT - 1) * INSERTED_PER_GAP
# 0-based output slots of the keyframes: 0, 4, ..., 28
KEYFRAME_INDEXES = tuple(range(0, OUTPUT_FRAMES, INSERTED_PER_GAP + 1))
KEY_SLOTS = [0, WINDOW - 1]


@dataclass(frozen=True)
class InterpolationConfig:
    steps: int = 4000
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    sampling_steps: int = 25
    train_clips: int = 256
    log_every: int = 100

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.sampling_steps, self.train_clips) < 1:
            raise InvalidRangeError('Interpolation steps, batch size and clip count must be >= 1')
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise InvalidRangeError('learning_rate must be > 0 and weight_decay >= 0')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


def keyframe_conditioning(batch, dtype):
    """
    The interpolator ignores text: its conditioning is the zero vector
    """
    return torch.zeros(batch, EMBEDDING_DIM, dtype=dtype)


def window_times(gap):
    return [gap + j / (WINDOW - 1) for j in range(WINDOW)]


def interpolation_windows(records, frame_size=16):
    """
    Ground-truth windows rendered at quarter-frame times across every gap
    of every clip: (M, 5, d)
    """
    windows = []
    for record in records:
        prompt = record.prompt
        appearance = (prompt.attribute('shape'), prompt.attribute('intensity'))
        background = (prompt.attribute('texture'), prompt.attribute('level'))
        for gap in range(record.video.shape[0] - 1):
            windows.append(render_frames(record.motion, appearance, background, window_times(gap),
                                         seed=record.seed, frame_size=frame_size))
    return torch.stack(windows)


def clamp_keyframes(window, keys):
    window = window.clone()
    window[:, KEY_SLOTS] = keys
    return window


def interpolation_loss(params, windows, t, eps, s):
    """
    Noise-matching loss on the middle slots, with clean keyframes in the
    outer slots
    """
    v_t = clamp_keyframes(forward_sample(windows, t, eps, s), windows[:, KEY_SLOTS])
    c = keyframe_conditioning(windows.shape[0], windows.dtype)
    residual = params(v_t, t, c) - eps
    return (residual[:, 1:-1] ** 2).mean()


def train_interpolator(cfg, seed, denoiser_config=None, schedule=None, frame_count=8):
    denoiser_config = denoiser_config or DenoiserConfig.from_dict(settings.VMC['denoiser'])
    s = schedule or schedule_from_config(settings.VMC['schedule'])
    records = build_corpus(cfg.train_clips, seed=seed, frame_count=frame_count,
                           frame_size=denoiser_config.frame_size)
    windows = interpolation_windows(records, denoiser_config.frame_size)
    logger.info('Training interpolator on %d windows from %d clips', len(windows), len(records))

    params = init_denoiser(denoiser_config, seed)
    params.train()
    optimizer = torch.optim.AdamW(params.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for step in range(1, cfg.steps + 1):
        index = torch.randint(len(windows), (cfg.batch_size,), generator=gen)
        t = torch.randint(1, s.T + 1, (cfg.batch_size,), generator=gen)
        batch = windows[index]
        eps = torch.randn(batch.shape, generator=gen)
        loss = interpolation_loss(params, batch, t, eps, s)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if step % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('interp step %d/%d: loss %.4f', step, cfg.steps, sum(recent) / len(recent))
    params.eval()
    return TrainingResult(params=params, losses=losses)


@torch.no_grad()
def interpolate_frames(keyframes, interp_params, s, steps=25, seed=0):
    """
    (8, d) keyframes -> (29, d) video; keyframe n lands on output slot 4n
    unchanged.
    """
    validate_video(keyframes, frame_dim=interp_params.config.frame_dim)
    if keyframes.dim() != 2 or keyframes.shape[0] != KEYFRAME_COUNT:
        raise ShapeMismatchError(f'Interpolation takes exactly {KEYFRAME_COUNT} keyframes, got {tuple(keyframes.shape)}')
    dtype = model_dtype(interp_params)
    keyframes = keyframes.to(dtype)
    keys = torch.stack([keyframes[:-1], keyframes[1:]], dim=1)
    gaps = keys.shape[0]
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(gaps, WINDOW, keyframes.shape[1], generator=gen, dtype=dtype)
    x = clamp_keyframes(x, keys)
    c = keyframe_conditioning(gaps, dtype)
    grid = timestep_grid(s.T, steps)
    for t, t_prev in zip(reversed(grid), reversed([0] + grid[:-1])):
        eps = interp_params(x, t, c)
        x = clamp_keyframes(ddim_step(x, eps, t, t_prev, s, 0.0), keys)

    frames = [x[g, :-1] for g in range(gaps)] + [keyframes[-1:]]
    return torch.cat(frames)
