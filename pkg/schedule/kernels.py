"""
Discrete noise schedule and the closed-form forward kernels.

Timesteps are 1-indexed integers in [1, T]; t = 0 denotes clean data and
alpha_bar at t = 0 is 1. All tables are float64.
"""
import json
from dataclasses import dataclass, field

import torch

from vmc_desk.errors import InvalidRangeError, ShapeMismatchError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    beta, alpha, alpha_bar and beta_tilde tables of length T; entry t - 1
    holds the value for timestep t. Immutable once built.
    """
    beta: torch.Tensor
    alpha: torch.Tensor = field(init=False)
    alpha_bar: torch.Tensor = field(init=False)
    beta_tilde: torch.Tensor = field(init=False)

    def __post_init__(self):
        beta = torch.as_tensor(self.beta, dtype=torch.float64).detach().clone().reshape(-1)
        if beta.numel() < 2:
            raise InvalidRangeError(f'A schedule needs T >= 2 steps, got {beta.numel()}')
        if not bool(((beta > 0) & (beta < 1)).all()):
            raise InvalidRangeError('Every beta must lie in (0, 1)')

        alpha = 1.0 - beta
        alpha_bar = torch.cumprod(alpha, dim=0)
        alpha_bar_prev = torch.cat([alpha_bar.new_ones(1), alpha_bar[:-1]])
        beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
        # no posterior noise on the step that lands on clean data
        beta_tilde[0] = 0.0

        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'alpha_bar', alpha_bar)
        object.__setattr__(self, 'beta_tilde', beta_tilde)
        # index 0 is the clean end
        object.__setattr__(self, '_alpha_bar_padded', torch.cat([alpha_bar.new_ones(1), alpha_bar]))

    @property
    def T(self):
        return int(self.beta.numel())

    def check_timestep(self, t, allow_zero=False):
        low = 0 if allow_zero else 1
        values = torch.as_tensor(t)
        if values.numel() == 0 or bool((values < low).any()) or bool((values > self.T).any()):
            raise InvalidRangeError(f'Timestep {t} outside [{low}, {self.T}]')

    def gather(self, table, t, like=None, allow_zero=False):
        """
        Look up `table` ('alpha', 'alpha_bar', 'beta', 'beta_tilde') at t.

        An int t gives a 0-d tensor; a (B,) tensor t gives values shaped to
        broadcast against `like`, whose leading dimension is B.
        """
        self.check_timestep(t, allow_zero=allow_zero)
        if table == 'alpha_bar':
            values, index = self._alpha_bar_padded, torch.as_tensor(t)
        else:
            if allow_zero:
                raise InvalidRangeError(f'{table} is undefined at t = 0')
            values, index = getattr(self, table), torch.as_tensor(t) - 1
        picked = values[index.long()]
        if like is not None:
            picked = picked.to(like.dtype)
            if picked.dim() == 1:
                picked = picked.view(-1, *((1,) * (like.dim() - 1)))
        return picked

    def to_dict(self):
        return {'T': self.T, 'beta': self.beta.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        beta = data.get('beta')
        if beta is None or len(beta) != data.get('T'):
            raise InvalidRangeError('Schedule JSON needs T and a beta list of length T')
        return cls(beta=torch.tensor(beta, dtype=torch.float64))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def make_linear_schedule(T, beta_start, beta_end):
    if T < 2:
        raise InvalidRangeError(f'T must be at least 2, got {T}')
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidRangeError(
            f'Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}')
    return NoiseSchedule(beta=torch.linspace(beta_start, beta_end, T, dtype=torch.float64))


def schedule_from_config(section):
    return make_linear_schedule(int(section['T']), float(section['beta_start']), float(section['beta_end']))


def forward_sample(x0, t, eps, s):
    """
    sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
    """
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f'eps shape {tuple(eps.shape)} differs from x0 shape {tuple(x0.shape)}')
    alpha_bar = s.gather('alpha_bar', t, like=x0)
    return alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps


def residual_kernel_params(s, t):
    """
    Mean scale and per-coordinate variance of the frame-residual kernel
    p(dv_t | dv_0).
    """
    if not isinstance(t, int):
        raise InvalidRangeError(f'Timestep must be an int, got {t!r}')
    alpha_bar = float(s.gather('alpha_bar', t))
    return alpha_bar ** 0.5, 2.0 * (1.0 - alpha_bar)


def score_from_epsilon(eps_pred, s, t):
    alpha_bar = s.gather('alpha_bar', t, like=eps_pred)
    return -eps_pred / (1.0 - alpha_bar).sqrt()
