import logging
import time
from dataclasses import asdict, dataclass, field, replace

import torch

from conditioning.prompts import appearance_invariant, encode_prompt
from denoiser.checkpoints import module_hash
from diffusion.sampling import SamplerConfig, ddim_invert, sample
from diffusion.video import validate_video
from vmc_desk.config import section_kwargs
from vmc_desk.errors import FrozenStageError, InvalidRangeError

from .interpolation import interpolate_frames
from .upscaler import super_resolve

logger = logging.getLogger(__name__)

INVERSION_CONDITIONING = ('invariant', 'source')


@dataclass(frozen=True, eq=False)
class CascadeBundle:
    """
    Keyframe denoiser plus the frozen interpolation and upscaling stages.

    The frozen stages' hashes are taken when the bundle is built and
    checked by verify_frozen.
    """
    keyframe_params: torch.nn.Module
    interp_params: torch.nn.Module
    sr_params: torch.nn.Module
    schedule: object
    interp_schedule: object = None
    frozen_hashes: dict = field(default=None)

    def __post_init__(self):
        if self.interp_schedule is None:
            object.__setattr__(self, 'interp_schedule', self.schedule)
        for stage in (self.interp_params, self.sr_params):
            stage.requires_grad_(False)
            stage.eval()
        if self.frozen_hashes is None:
            object.__setattr__(self, 'frozen_hashes', self.current_frozen_hashes())

    def current_frozen_hashes(self):
        return {
            'interpolator': module_hash(self.interp_params),
            'upscaler': module_hash(self.sr_params),
        }

    def verify_frozen(self):
        current = self.current_frozen_hashes()
        for stage, digest in self.frozen_hashes.items():
            if current[stage] != digest:
                raise FrozenStageError(
                    f'The {stage} stage changed during the run: {digest[:12]} -> {current[stage][:12]}')
        return current

    def with_keyframe_params(self, params):
        return replace(self, keyframe_params=params)


@dataclass(frozen=True)
class PipelineConfig:
    inversion_steps: int = 50
    invert_with: str = 'invariant'
    interp_steps: int = 25
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.invert_with not in INVERSION_CONDITIONING:
            raise InvalidRangeError(f'invert_with must be one of {INVERSION_CONDITIONING}, got "{self.invert_with}"')
        if self.inversion_steps < 1 or self.interp_steps < 1:
            raise InvalidRangeError('Step counts must be >= 1')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


@dataclass
class PipelineResult:
    final: torch.Tensor
    keyframes: torch.Tensor
    inverted_latent: torch.Tensor
    interpolated: torch.Tensor
    timings: dict = field(default_factory=dict)
    frozen_hashes: dict = field(default_factory=dict)


def generate_keyframes(params, s, source, source_prompt, target_prompt, cfg):
    """
    Invert the source clip with the keyframe denoiser and sample keyframes
    for target_prompt from the inverted latent. Returns (keyframes, latent).
    """
    inversion_prompt = appearance_invariant(source_prompt) if cfg.invert_with == 'invariant' else source_prompt
    inversion = ddim_invert(params, source, encode_prompt(inversion_prompt), cfg.inversion_steps, s)
    sampler = SamplerConfig(eta=cfg.eta, steps=cfg.inversion_steps, seed=cfg.seed, frame_count=source.shape[-2])
    keyframes = sample(params, encode_prompt(target_prompt), sampler, s, init_latent=inversion.latent)
    return keyframes.clamp(0.0, 1.0), inversion.latent


def vmc_pipeline(source, source_prompt, target_prompt, bundle, cfg):
    """
    Inversion, keyframe generation, temporal interpolation and
    super-resolution of one source clip for target_prompt.
    """
    validate_video(source, frame_dim=bundle.keyframe_params.config.frame_dim)
    bundle.verify_frozen()
    timings = {}

    started = time.perf_counter()
    keyframes, latent = generate_keyframes(bundle.keyframe_params, bundle.schedule, source, source_prompt,
                                           target_prompt, cfg)
    timings['keyframes'] = time.perf_counter() - started

    started = time.perf_counter()
    interpolated = interpolate_frames(keyframes, bundle.interp_params, bundle.interp_schedule,
                                      steps=cfg.interp_steps, seed=cfg.seed)
    timings['interpolation'] = time.perf_counter() - started

    started = time.perf_counter()
    final = super_resolve(interpolated.clamp(0.0, 1.0), bundle.sr_params)
    timings['super_resolution'] = time.perf_counter() - started

    hashes = bundle.verify_frozen()
    logger.info('Generated "%s" from "%s" in %.1fs', target_prompt, source_prompt, sum(timings.values()))
    return PipelineResult(final=final, keyframes=keyframes, inverted_latent=latent,
                          interpolated=interpolated, timings=timings, frozen_hashes=hashes)
