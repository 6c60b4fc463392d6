"""
Tweedie estimates, DDPM/DDIM reverse steps, DDIM inversion and sampling.
"""
import logging
from dataclasses import asdict, dataclass, field

import torch

from vmc_desk.config import section_kwargs
from vmc_desk.errors import ConfigError, InvalidRangeError

from .video import model_dtype, require_same_shape, validate_video

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    eta: float = 0.0
    steps: int = 50
    seed: int = 0
    frame_count: int = 8

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidRangeError(f'eta must lie in [0, 1], got {self.eta}')
        if self.steps < 1:
            raise InvalidRangeError(f'steps must be >= 1, got {self.steps}')
        if self.frame_count < 2:
            raise InvalidRangeError(f'frame_count must be >= 2, got {self.frame_count}')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


def timestep_grid(T, steps):
    """
    Ascending uniform-stride grid over [1, T] ending at T
    """
    if not 1 <= steps <= T:
        raise InvalidRangeError(f'steps must lie in [1, {T}], got {steps}')
    return [(i + 1) * T // steps for i in range(steps)]


def tweedie_video(v_t, eps_pred, t, s):
    """
    Posterior-mean estimate of the clean video from v_t and a noise prediction
    """
    require_same_shape(v_t, eps_pred)
    alpha_bar = s.gather('alpha_bar', t, like=v_t)
    return (v_t - (1.0 - alpha_bar).sqrt() * eps_pred) / alpha_bar.sqrt()


def ddpm_step(v_t, eps_pred, t, s, noise):
    require_same_shape(v_t, eps_pred, noise)
    alpha = s.gather('alpha', t, like=v_t)
    alpha_bar = s.gather('alpha_bar', t, like=v_t)
    beta_tilde = s.gather('beta_tilde', t, like=v_t)
    mean = (v_t - (1.0 - alpha) / (1.0 - alpha_bar).sqrt() * eps_pred) / alpha.sqrt()
    return mean + beta_tilde * noise


def ddim_step(v_t, eps_pred, t, t_prev, s, eta, noise=None):
    """
    One DDIM update from t to t_prev < t. The step that lands on t_prev = 0
    adds no noise.
    """
    if not 0 <= t_prev < t:
        raise InvalidRangeError(f'Need 0 <= t_prev < t, got t={t}, t_prev={t_prev}')
    if not 0.0 <= eta <= 1.0:
        raise InvalidRangeError(f'eta must lie in [0, 1], got {eta}')
    x0 = tweedie_video(v_t, eps_pred, t, s)
    alpha_bar_prev = s.gather('alpha_bar', t_prev, like=v_t, allow_zero=True)
    sigma = 0.0 if t_prev == 0 else eta * float(s.gather('beta_tilde', t))
    radicand = 1.0 - alpha_bar_prev - sigma ** 2
    if float(radicand) < 0:
        raise ConfigError(f'eta={eta} is too large for the schedule at t={t}')
    out = alpha_bar_prev.sqrt() * x0 + radicand.sqrt() * eps_pred
    if sigma > 0:
        if noise is None:
            raise ConfigError('A stochastic DDIM step needs a noise tensor')
        require_same_shape(v_t, noise)
        out = out + sigma * noise
    return out


@dataclass
class InversionResult:
    latent: torch.Tensor
    grid: list
    latents: dict = field(default_factory=dict)


@torch.no_grad()
def ddim_invert(params, video, c, steps, s):
    """
    Run the eta = 0 DDIM recursion upwards from the clean video to the
    deepest grid step. ε is evaluated at the destination timestep with the
    current latent.
    """
    validate_video(video)
    grid = timestep_grid(s.T, steps)
    x = video.to(model_dtype(params))
    latents = {0: x}
    t_prev = 0
    for t in grid:
        eps = params(x, t, c)
        x0 = tweedie_video(x, eps, t_prev, s) if t_prev else x
        alpha_bar = s.gather('alpha_bar', t, like=x)
        x = alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps
        latents[t] = x
        t_prev = t
    logger.debug('Inverted %d-frame video to t=%d in %d steps', x.shape[-2], grid[-1], len(grid))
    return InversionResult(latent=x, grid=grid, latents=latents)


@torch.no_grad()
def sample(params, c, cfg, s, init_latent=None):
    """
    DDIM sampling over the grid, from init_latent (the deepest-step state)
    or from seeded standard-normal noise.
    """
    grid = timestep_grid(s.T, cfg.steps)
    dtype = model_dtype(params)
    gen = torch.Generator().manual_seed(cfg.seed)
    if init_latent is None:
        x = torch.randn(cfg.frame_count, params.config.frame_dim, generator=gen, dtype=dtype)
    else:
        x = validate_video(init_latent).to(dtype)
    previous = [0] + grid[:-1]
    for t, t_prev in zip(reversed(grid), reversed(previous)):
        eps = params(x, t, c)
        noise = torch.randn(x.shape, generator=gen, dtype=dtype) if cfg.eta > 0 and t_prev > 0 else None
        x = ddim_step(x, eps, t, t_prev, s, cfg.eta, noise)
    return x
