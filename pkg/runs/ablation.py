"""
Experiment harness behind the `ablate` command.

Each case is a clip whose (motion, shape) pair was held out of base
training. Every arm distils the case (or skips distillation) and
generates keyframes for a different appearance and background; the
keyframes are scored against the source.
"""
import logging
import math
from dataclasses import dataclass, replace

import torch

from cascade.pipeline import generate_keyframes
from conditioning.prompts import StructuredPrompt, appearance_invariant
from conditioning.vocabulary import BACKGROUND_LEVELS, INTENSITIES, MOTIONS, SHAPES, TEXTURES
from corpus.generator import FOREGROUND_THRESHOLD, generate_clip, heldout_shape, make_motion_spec, reverse_clip
from metrics.scores import check_classifier, frame_consistency, motion_preservation, prompt_alignment
from motion.adaptation import SPATIAL_AND_CONDITIONING, adapt_temporal_attention
from vmc_desk.errors import InvalidRangeError

logger = logging.getLogger(__name__)

TEMPORAL = ('temporal_attention',)
DEFAULT_MOTIONS = ('translate-right', 'walk', 'bounce', 'orbit')
STUDIES = ('arms', 'backward')


@dataclass(frozen=True)
class AblationArm:
    name: str
    loss: str = 'cos'
    labels: tuple = TEMPORAL
    adapted: bool = True


ARMS = (
    AblationArm('cos-temporal'),
    AblationArm('l2-temporal', loss='l2'),
    AblationArm('cos-spatial-cond', labels=SPATIAL_AND_CONDITIONING),
    AblationArm('l2-spatial-cond', loss='l2', labels=SPATIAL_AND_CONDITIONING),
    AblationArm('frozen', adapted=False),
)
ARMS_BY_NAME = {arm.name: arm for arm in ARMS}


@dataclass(frozen=True, eq=False)
class AblationCase:
    case_id: str
    source: torch.Tensor
    source_prompt: StructuredPrompt
    target_prompt: StructuredPrompt
    seed: int


def _pick_other(gen, names, exclude):
    choices = [name for name in names if name != exclude]
    return choices[int(torch.randint(len(choices), (1,), generator=gen))]


def make_case(motion_class, seed, frame_count=8, frame_size=16):
    """
    A held-out (motion, shape) clip and a target prompt that changes shape,
    intensity, texture and level while keeping the motion.
    """
    gen = torch.Generator().manual_seed(seed * len(MOTIONS) + MOTIONS.index(motion_class))
    shape = heldout_shape(motion_class)
    intensity = _pick_other(gen, tuple(INTENSITIES), None)
    texture = _pick_other(gen, TEXTURES, None)
    level = _pick_other(gen, tuple(BACKGROUND_LEVELS), None)
    spec = make_motion_spec(motion_class, frame_count, seed, frame_size)
    source, source_prompt = generate_clip(spec, (shape, intensity), (texture, level), frame_count, seed,
                                          frame_size=frame_size)
    target_prompt = StructuredPrompt(
        motion_class,
        (_pick_other(gen, SHAPES, shape), _pick_other(gen, tuple(INTENSITIES), intensity)),
        (_pick_other(gen, TEXTURES, texture), _pick_other(gen, tuple(BACKGROUND_LEVELS), level)),
    )
    return AblationCase(f'{motion_class}-{seed}', source, source_prompt, target_prompt, seed)


def ablation_cases(motions, seeds, frame_count=8, frame_size=16):
    return [make_case(m, seed, frame_count, frame_size) for m in motions for seed in seeds]


def select_arms(names):
    unknown = [name for name in names if name not in ARMS_BY_NAME]
    if unknown:
        raise InvalidRangeError(f'Unknown ablation arms {unknown}, expected names from {list(ARMS_BY_NAME)}')
    return tuple(ARMS_BY_NAME[name] for name in names)


def keyframe_params_for(arm, base_params, case, adapt_cfg, s, source=None):
    if not arm.adapted:
        return base_params
    cfg = replace(adapt_cfg, loss=arm.loss, labels=arm.labels)
    result = adapt_temporal_attention(base_params, case.source if source is None else source,
                                      appearance_invariant(case.source_prompt), cfg, s, seed=case.seed)
    return result.params


def score_keyframes(case, keyframes, classifier, min_accuracy, threshold=FOREGROUND_THRESHOLD):
    return {
        'motion_preservation': motion_preservation(case.source, keyframes, threshold),
        'frame_consistency': frame_consistency(keyframes),
        'prompt_alignment': prompt_alignment(keyframes, case.target_prompt, classifier, min_accuracy),
    }


@dataclass
class AblationResult:
    rows: list
    summary: dict
    checks: dict


def _mean(values):
    finite = [v for v in values if not math.isnan(v)]
    return sum(finite) / len(finite) if finite else float('nan')


def summarise_arms(rows):
    """
    {arm: {metric: mean over cases}} from (arm, case_id, metric, value) rows
    """
    grouped = {}
    for arm, _, metric, value in rows:
        grouped.setdefault(arm, {}).setdefault(metric, []).append(value)
    return {arm: {metric: _mean(values) for metric, values in metrics.items()} for arm, metrics in grouped.items()}


def arm_checks(summary, thresholds):
    """
    Pass/fail of the customization, adaptation and loss comparisons for
    the arms present in `summary`.
    """
    def passes(arm):
        metrics = summary[arm]
        return (metrics['motion_preservation'] >= thresholds['motion_threshold']
                and metrics['prompt_alignment'] >= thresholds['alignment_threshold'])

    checks = {}
    if 'cos-temporal' in summary:
        checks['customization'] = passes('cos-temporal')
    if {'cos-temporal', 'frozen'} <= set(summary):
        margin = summary['cos-temporal']['motion_preservation'] - summary['frozen']['motion_preservation']
        checks['adaptation_margin'] = margin
        checks['adaptation'] = margin >= thresholds['adaptation_margin']
    if {'cos-temporal', 'l2-temporal'} <= set(summary):
        checks['loss_margin'] = (summary['cos-temporal']['motion_preservation']
                                 - summary['l2-temporal']['motion_preservation'])
        checks['both_losses'] = passes('cos-temporal') and passes('l2-temporal')
    return checks


def run_ablation(base_params, cases, classifier, adapt_cfg, pipeline_cfg, s, thresholds,
                 arms=ARMS, min_accuracy=0.95):
    check_classifier(classifier, min_accuracy)
    threshold = thresholds.get('foreground_threshold', FOREGROUND_THRESHOLD)
    rows = []
    for case in cases:
        for arm in arms:
            params = keyframe_params_for(arm, base_params, case, adapt_cfg, s)
            keyframes, _ = generate_keyframes(params, s, case.source, case.source_prompt,
                                              case.target_prompt, pipeline_cfg)
            scores = score_keyframes(case, keyframes, classifier, min_accuracy, threshold)
            rows.extend((arm.name, case.case_id, metric, value) for metric, value in scores.items())
            logger.info('%s on %s: motion %.3f, alignment %.3f', arm.name, case.case_id,
                        scores['motion_preservation'], scores['prompt_alignment'])
    summary = summarise_arms(rows)
    return AblationResult(rows=rows, summary=summary, checks=arm_checks(summary, thresholds))


def run_backward(base_params, cases, adapt_cfg, pipeline_cfg, s, thresholds):
    """
    Distil the reversed source and compare the keyframes with the reversed
    and the forward tracks.
    """
    threshold = thresholds.get('foreground_threshold', FOREGROUND_THRESHOLD)
    rows = []
    arm = ARMS_BY_NAME['cos-temporal']
    for case in cases:
        backward = reverse_clip(case.source)
        params = keyframe_params_for(arm, base_params, case, adapt_cfg, s, source=backward)
        keyframes, _ = generate_keyframes(params, s, backward, case.source_prompt, case.target_prompt, pipeline_cfg)
        reversed_score = motion_preservation(backward, keyframes, threshold)
        forward_score = motion_preservation(case.source, keyframes, threshold)
        rows.append(('backward', case.case_id, 'motion_vs_reversed', reversed_score))
        rows.append(('backward', case.case_id, 'motion_vs_forward', forward_score))
    summary = summarise_arms(rows)
    means = summary.get('backward', {})
    checks = {
        'follows_reversed': means.get('motion_vs_reversed', float('nan')) >= thresholds['motion_threshold'],
        'opposes_forward': means.get('motion_vs_forward', float('nan')) <= -0.5,
    }
    return AblationResult(rows=rows, summary=summary, checks=checks)
