"""
Desk-scale evaluation scores.

Each score stands in for a feature-based measure and is reported under its
own name (METRIC_LABELS) so it is never read as the original measure.
"""
import logging
import math

import torch
import torch.nn.functional as F

from corpus.generator import FOREGROUND_THRESHOLD, extract_centroid_track
from vmc_desk.errors import ClassifierMissingError, MetricPrerequisiteError, ShapeMismatchError

logger = logging.getLogger(__name__)

METRIC_LABELS = {
    'prompt_alignment': 'factor-classifier-alignment',
    'frame_consistency': 'raw-cosine-consistency',
    'motion_preservation': 'trajectory-correlation',
}

_STATIC = 1e-9


def _side(video):
    side = math.isqrt(video.shape[-1])
    if side * side != video.shape[-1]:
        raise ShapeMismatchError(f'Frame dimension {video.shape[-1]} is not a square')
    return side


def aligned_track(video, frame_count, frame_size, threshold=FOREGROUND_THRESHOLD):
    """
    Centroid track of `video` expressed on a frame_count-frame,
    frame_size-pixel grid: longer videos are sampled at the keyframe
    stride and larger frames have their coordinates mapped back.
    """
    track = extract_centroid_track(video, threshold=threshold).track
    frames = track.shape[0]
    if frames != frame_count:
        stride, rest = divmod(frames - 1, frame_count - 1)
        if rest or stride < 1:
            raise ShapeMismatchError(f'Cannot align a {frames}-frame track to {frame_count} frames')
        track = track[::stride]
    scale = _side(video) / frame_size
    return (track + 0.5) / scale - 0.5


def track_correlation(source_track, generated_track):
    """
    Zero-anchored correlation of the per-frame displacements of two tracks,
    per axis, averaged over the axes that move. Returns (score,
    diagnostics); the score is NaN when neither track moves or a track has
    no foreground.
    """
    if source_track.shape != generated_track.shape:
        raise ShapeMismatchError(f'Track shapes {tuple(source_track.shape)} and {tuple(generated_track.shape)} differ')
    blank = [name for name, track in (('source', source_track), ('generated', generated_track))
             if not bool(torch.isfinite(track).all())]
    if blank:
        return float('nan'), {'axes': {}, 'degenerate': f'no foreground in the {" and ".join(blank)} track'}
    a = source_track[1:] - source_track[:-1]
    b = generated_track[1:] - generated_track[:-1]
    per_axis = {}
    for axis, name in enumerate(('row', 'col')):
        na, nb = float(a[:, axis].norm()), float(b[:, axis].norm())
        if na < _STATIC and nb < _STATIC:
            continue
        if na < _STATIC or nb < _STATIC:
            per_axis[name] = 0.0
        else:
            per_axis[name] = float((a[:, axis] * b[:, axis]).sum()) / (na * nb)
    diagnostics = {'axes': per_axis}
    if not per_axis:
        diagnostics['degenerate'] = 'neither track moves'
        return float('nan'), diagnostics
    return sum(per_axis.values()) / len(per_axis), diagnostics


def motion_preservation(source, generated, threshold=FOREGROUND_THRESHOLD):
    """
    Trajectory correlation between the source clip and a generated video,
    which may be longer (sampled at keyframe indexes) or larger.
    """
    frames, side = source.shape[-2], _side(source)
    score, diagnostics = track_correlation(
        aligned_track(source, frames, side, threshold),
        aligned_track(generated, frames, side, threshold),
    )
    if math.isnan(score):
        logger.warning('Motion preservation undefined: %s', diagnostics['degenerate'])
    return score


def frame_consistency(v):
    """
    Mean over frame pairs of (1 + cos) / 2 between mean-subtracted frames.
    Pairs with a constant frame are skipped; NaN if every pair is.
    """
    if v.shape[-2] < 2:
        raise ShapeMismatchError('Frame consistency needs at least 2 frames')
    frames = v.detach().to(torch.float64)
    centred = frames - frames.mean(dim=-1, keepdim=True)
    norms = centred.norm(dim=-1)
    flat = norms < _STATIC * math.sqrt(frames.shape[-1])
    unit = centred / norms.clamp_min(1e-300)[:, None]
    cosines = unit @ unit.T
    scores, skipped = [], 0
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            if flat[i] or flat[j]:
                skipped += 1
                continue
            scores.append((1.0 + float(cosines[i, j])) / 2.0)
    if skipped:
        logger.warning('Skipped %d frame pairs with a constant frame', skipped)
    if not scores:
        return float('nan')
    return sum(scores) / len(scores)


def prepare_for_classifier(v, frame_count, frame_size):
    """
    Sample keyframes and average-pool frames to the classifier's input grid
    """
    side = _side(v)
    frames = v.shape[-2]
    if frames != frame_count:
        stride, rest = divmod(frames - 1, frame_count - 1)
        if rest or stride < 1:
            raise ShapeMismatchError(f'Cannot sample {frame_count} keyframes from {frames} frames')
        v = v[::stride]
    if side != frame_size:
        factor, rest = divmod(side, frame_size)
        if rest:
            raise ShapeMismatchError(f'{side}x{side} frames do not pool to {frame_size}x{frame_size}')
        v = F.avg_pool2d(v.reshape(-1, 1, side, side), factor).reshape(v.shape[0], -1)
    return v


def check_classifier(classifier, min_accuracy):
    if classifier is None:
        raise ClassifierMissingError('Prompt alignment needs a trained factor classifier (run train_classifier)')
    accuracy = float(classifier.heldout_accuracy)
    if accuracy < min_accuracy:
        raise MetricPrerequisiteError(
            f'Factor classifier held-out accuracy {accuracy:.3f} is below the required {min_accuracy:.2f}')
    return accuracy


def prompt_alignment(v, p, classifier, min_accuracy=0.95):
    """
    Mean classifier probability of the prompt's motion, shape and intensity
    classes (those the prompt names).
    """
    check_classifier(classifier, min_accuracy)
    cfg = classifier.config
    probabilities = classifier.predict_proba(prepare_for_classifier(v, cfg.frame_count, cfg.frame_size))
    wanted = {'motion': p.motion, 'shape': p.attribute('shape'), 'intensity': p.attribute('intensity')}
    values = [
        float(probabilities[head][classifier.class_index(head, name)])
        for head, name in wanted.items() if name is not None
    ]
    return sum(values) / len(values)
