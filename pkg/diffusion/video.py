"""
Videos are tensors of shape (N, d): N frames of d flattened pixels, or
(B, N, d) for a batch. Clean frames hold values in [0, 1].
"""
import torch

from vmc_desk.errors import ShapeMismatchError


def validate_video(video, frame_dim=None, min_frames=2):
    if not torch.is_tensor(video) or video.dim() not in (2, 3):
        raise ShapeMismatchError(f'A video is an (N, d) or (B, N, d) tensor, got {getattr(video, "shape", type(video))}')
    frames, dim = video.shape[-2:]
    if frames < min_frames:
        raise ShapeMismatchError(f'A video needs at least {min_frames} frames, got {frames}')
    if dim < 1 or (frame_dim is not None and dim != frame_dim):
        raise ShapeMismatchError(f'Frame dimension {dim} does not match {frame_dim}')
    if not bool(torch.isfinite(video).all()):
        raise ShapeMismatchError('Video holds non-finite values')
    return video


def require_same_shape(*tensors):
    shape = tensors[0].shape
    for tensor in tensors[1:]:
        if tensor.shape != shape:
            raise ShapeMismatchError(f'Shape {tuple(tensor.shape)} does not match {tuple(shape)}')


def model_dtype(params):
    return next(params.parameters()).dtype
