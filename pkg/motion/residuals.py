"""
Frame residuals ("motion vectors") and the losses that align predicted
noise residuals with the true ones.

Residuals are taken along the frame axis (second to last), so every
function accepts (N, d) videos and (B, N, d) batches alike.
"""
import logging
from dataclasses import dataclass

import torch

from diffusion.video import require_same_shape
from vmc_desk.errors import InvalidRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

COS_GUARD = 1e-8


@dataclass(frozen=True, eq=False)
class MotionVectors:
    """
    Row n holds source[n + stride] - source[n]; timestep is the noise level
    of the source (0 for clean frames).
    """
    deltas: torch.Tensor
    stride: int = 1
    timestep: int = 0

    @property
    def rows(self):
        return self.deltas.shape[-2]

    def zero_norm_rows(self):
        return int((self.deltas.norm(dim=-1) == 0).sum())


def motion_vectors(x, stride=1, timestep=0):
    if x.dim() not in (2, 3):
        raise ShapeMismatchError(f'Expected an (N, d) or (B, N, d) tensor, got {tuple(x.shape)}')
    frames = x.shape[-2]
    if not 1 <= stride <= frames - 1:
        raise InvalidRangeError(f'Stride must lie in [1, {frames - 1}], got {stride}')
    return MotionVectors(deltas=x[..., stride:, :] - x[..., :-stride, :], stride=stride, timestep=timestep)


def predicted_epsilon_residuals(eps_pred, stride=1, timestep=0):
    return motion_vectors(eps_pred, stride=stride, timestep=timestep)


def _check_pair(first, second):
    require_same_shape(first.deltas, second.deltas)
    if first.stride != second.stride:
        raise ShapeMismatchError(f'Residual strides differ: {first.stride} and {second.stride}')


def denoised_motion_estimate(dv_t, d_eps_pred, t, s):
    """
    Tweedie estimate of the clean residuals from noisy residuals and
    predicted noise residuals at timestep t.
    """
    _check_pair(dv_t, d_eps_pred)
    if dv_t.timestep != t or d_eps_pred.timestep != t:
        raise ShapeMismatchError(
            f'Residuals were formed at t={dv_t.timestep} and t={d_eps_pred.timestep}, not t={t}')
    alpha_bar = s.gather('alpha_bar', t, like=dv_t.deltas)
    deltas = (dv_t.deltas - (1.0 - alpha_bar).sqrt() * d_eps_pred.deltas) / alpha_bar.sqrt()
    return MotionVectors(deltas=deltas, stride=dv_t.stride, timestep=0)


def loss_l2_align(d_eps_true, d_eps_pred, t, s):
    """
    ((1 - alpha_bar_t) / alpha_bar_t) * |d_eps_true - d_eps_pred|^2, summed
    over pixels and averaged over rows. Equal to the squared distance
    between the clean residuals and their denoised estimate.
    """
    _check_pair(d_eps_true, d_eps_pred)
    alpha_bar = s.gather('alpha_bar', t)
    weight = ((1.0 - alpha_bar) / alpha_bar).to(d_eps_true.deltas.dtype)
    return weight * ((d_eps_true.deltas - d_eps_pred.deltas) ** 2).sum(dim=-1).mean()


def cosine_rows(first, second):
    """
    Per-row cosine similarity with a guarded denominator
    """
    dot = (first * second).sum(dim=-1)
    return dot / (first.norm(dim=-1) * second.norm(dim=-1) + COS_GUARD)


def loss_cos(d_eps_true, d_eps_pred):
    """
    Mean over rows of 1 - cos(d_eps_true, d_eps_pred); lies in [0, 2]
    """
    _check_pair(d_eps_true, d_eps_pred)
    return (1.0 - cosine_rows(d_eps_true.deltas, d_eps_pred.deltas)).mean()


LOSSES = ('cos', 'l2')


def distillation_loss(name, d_eps_true, d_eps_pred, t, s):
    if name == 'cos':
        return loss_cos(d_eps_true, d_eps_pred)
    if name == 'l2':
        return loss_l2_align(d_eps_true, d_eps_pred, t, s)
    raise InvalidRangeError(f'Unknown distillation loss "{name}", expected one of {LOSSES}')
