"""
One-shot motion distillation: fine-tune a labelled subset of the denoiser
(the temporal-attention Q/K/V projections by default) so its predicted
noise residuals line up with the true ones of a single source clip.
"""
import copy
import logging
from dataclasses import asdict, dataclass, field

import torch

from conditioning.prompts import encode_prompt, is_appearance_invariant
from denoiser.network import ParameterLabel, parse_labels
from diffusion.video import model_dtype, validate_video
from schedule.kernels import forward_sample
from vmc_desk.config import section_kwargs
from vmc_desk.errors import InvalidRangeError, PromptNotInvariantError

from .residuals import LOSSES, distillation_loss, motion_vectors, predicted_epsilon_residuals

logger = logging.getLogger(__name__)

SPATIAL_AND_CONDITIONING = (ParameterLabel.SPATIAL_ATTENTION.value, ParameterLabel.CONDITIONING.value)


@dataclass(frozen=True)
class AdaptConfig:
    steps: int = 400
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    loss: str = 'cos'
    labels: tuple = (ParameterLabel.TEMPORAL_ATTENTION.value,)
    stride: int = 1
    allow_non_invariant: bool = False
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, 'labels', tuple(self.labels))
        if self.steps < 1:
            raise InvalidRangeError(f'steps must be >= 1, got {self.steps}')
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise InvalidRangeError('learning_rate must be > 0 and weight_decay >= 0')
        if self.loss not in LOSSES:
            raise InvalidRangeError(f'Unknown distillation loss "{self.loss}", expected one of {LOSSES}')
        if self.stride < 1:
            raise InvalidRangeError(f'stride must be >= 1, got {self.stride}')
        if not self.labels:
            raise InvalidRangeError('Adaptation needs at least one parameter label')
        parse_labels(self.labels)

    @property
    def label_set(self):
        return parse_labels(self.labels)

    def to_dict(self):
        data = asdict(self)
        data['labels'] = list(self.labels)
        return data

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


@dataclass
class AdaptationResult:
    params: torch.nn.Module
    losses: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def distillation_objective(params, video, c, t, eps, s, loss='cos', stride=1):
    """
    Distillation loss of one (t, eps) draw: the true noise residuals against
    the residuals of the noise predicted for the forward-diffused video.
    Returns (loss, true residuals, predicted residuals).
    """
    v_t = forward_sample(video, t, eps, s)
    d_eps_true = motion_vectors(eps, stride=stride, timestep=t)
    d_eps_pred = predicted_epsilon_residuals(params(v_t, t, c), stride=stride, timestep=t)
    return distillation_loss(loss, d_eps_true, d_eps_pred, t, s), d_eps_true, d_eps_pred


def adapt_temporal_attention(params, video, prompt_inv, cfg, s, seed):
    """
    Run cfg.steps AdamW updates on a copy of `params`, touching only the
    tensors whose label is in cfg.labels. Each step draws t uniformly from
    [1, T] and fresh noise for every frame.
    """
    validate_video(video, frame_dim=params.config.frame_dim)
    if not cfg.allow_non_invariant and not is_appearance_invariant(prompt_inv):
        raise PromptNotInvariantError(
            f'Adaptation prompt "{prompt_inv}" carries appearance or background attributes')

    adapted = copy.deepcopy(params)
    adapted.requires_grad_(False)
    selected = adapted.labelled_parameters(cfg.label_set)
    if not selected:
        raise InvalidRangeError(f'No parameters carry the labels {list(cfg.labels)}')
    for _, p in selected:
        p.requires_grad_(True)

    dtype = model_dtype(adapted)
    video = video.to(dtype)
    c = encode_prompt(prompt_inv)
    optimizer = torch.optim.AdamW([p for _, p in selected], lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)

    losses = []
    zero_rows = 0
    adapted.train()
    for step in range(1, cfg.steps + 1):
        t = int(torch.randint(1, s.T + 1, (1,), generator=gen))
        eps = torch.randn(video.shape, generator=gen, dtype=dtype)
        loss, d_eps_true, d_eps_pred = distillation_objective(
            adapted, video, c, t, eps, s, loss=cfg.loss, stride=cfg.stride)
        zero_rows += d_eps_true.zero_norm_rows() + d_eps_pred.zero_norm_rows()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if step % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('distill step %d/%d: %s loss %.4f', step, cfg.steps, cfg.loss, sum(recent) / len(recent))

    adapted.eval()
    adapted.requires_grad_(True)
    if zero_rows:
        logger.warning('%d zero-norm residual rows met during adaptation', zero_rows)
    diagnostics = {
        'zero_norm_rows': zero_rows,
        'labels': list(cfg.labels),
        'trained_tensors': [name for name, _ in selected],
    }
    return AdaptationResult(params=adapted, losses=losses, diagnostics=diagnostics)
