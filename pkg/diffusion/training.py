import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from django.conf import settings

from conditioning.prompts import appearance_invariant, encode_prompts
from denoiser.network import DenoiserConfig, init_denoiser
from schedule.kernels import forward_sample, schedule_from_config
from vmc_desk.config import section_kwargs
from vmc_desk.errors import EmptyCorpusError, InvalidRangeError, ShapeMismatchError

from .video import require_same_shape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 6000
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    cond_drop_prob: float = 0.3
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidRangeError('steps and batch_size must be >= 1')
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise InvalidRangeError('learning_rate must be > 0 and weight_decay >= 0')
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise InvalidRangeError(f'cond_drop_prob must lie in [0, 1], got {self.cond_drop_prob}')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


@dataclass
class TrainingResult:
    params: torch.nn.Module
    losses: list = field(default_factory=list)


def epsilon_matching_loss(params, v0, t, eps, c, s):
    """
    Mean squared error between the predicted and the true noise of the
    forward-diffused video
    """
    require_same_shape(v0, eps)
    v_t = forward_sample(v0, t, eps, s)
    return ((params(v_t, t, c) - eps) ** 2).mean()


def stack_corpus(corpus):
    """
    (video, prompt) pairs -> (M, N, d) tensor and the prompt list
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpusError('Training needs a non-empty corpus')
    videos, prompts = zip(*corpus)
    shape = videos[0].shape
    for video in videos:
        if video.shape != shape:
            raise ShapeMismatchError(f'Corpus mixes video shapes {tuple(shape)} and {tuple(video.shape)}')
    return torch.stack([v.float() for v in videos]), list(prompts)


def train_base(corpus, cfg, seed, denoiser_config=None, schedule=None):
    """
    Epsilon-matching training of every parameter with AdamW. Prompts are
    replaced by their appearance-invariant form with probability
    cfg.cond_drop_prob.
    """
    videos, prompts = stack_corpus(corpus)
    denoiser_config = denoiser_config or DenoiserConfig.from_dict(settings.VMC['denoiser'])
    s = schedule or schedule_from_config(settings.VMC['schedule'])
    if videos.shape[-1] != denoiser_config.frame_dim:
        raise ShapeMismatchError(f'Corpus frames have {videos.shape[-1]} pixels, the denoiser expects {denoiser_config.frame_dim}')

    params = init_denoiser(denoiser_config, seed)
    params.train()
    full = encode_prompts(prompts)
    invariant = encode_prompts([appearance_invariant(p) for p in prompts])
    optimizer = torch.optim.AdamW(params.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)

    losses = []
    for step in range(1, cfg.steps + 1):
        index = torch.randint(len(videos), (cfg.batch_size,), generator=gen)
        t = torch.randint(1, s.T + 1, (cfg.batch_size,), generator=gen)
        v0 = videos[index]
        eps = torch.randn(v0.shape, generator=gen)
        drop = torch.rand(cfg.batch_size, generator=gen) < cfg.cond_drop_prob
        c = torch.where(drop[:, None], invariant[index], full[index])

        loss = epsilon_matching_loss(params, v0, t, eps, c, s)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if step % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('base step %d/%d: loss %.4f', step, cfg.steps, sum(recent) / len(recent))

    params.eval()
    return TrainingResult(params=params, losses=losses)


def write_loss_csv(path, losses):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['step', 'loss'])
        for step, loss in enumerate(losses, start=1):
            writer.writerow([step, f'{loss:.8f}'])
    return path
