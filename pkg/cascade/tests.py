import tempfile
from unittest import skipUnless

import torch
from django.conf import settings
from django.test import SimpleTestCase, tag

from conditioning.prompts import StructuredPrompt
from corpus.generator import (
    ClipRecord, MotionSpec, build_corpus, extract_centroid_track, generate_clip, make_motion_spec,
)
from denoiser.checkpoints import load_checkpoint, save_checkpoint
from denoiser.network import DenoiserConfig, init_denoiser
from schedule.kernels import make_linear_schedule
from vmc_desk.errors import FrozenStageError, InvalidRangeError, ShapeMismatchError

from .interpolation import (
    KEYFRAME_INDEXES, OUTPUT_FRAMES, InterpolationConfig, interpolate_frames,
    interpolation_windows, train_interpolator, window_times,
)
from .pipeline import CascadeBundle, PipelineConfig, vmc_pipeline
from .upscaler import (
    UpscalerConfig, UpscalerTrainingConfig, downsample, init_upscaler,
    super_resolve, train_upscaler, upscaler_pairs,
)

SMALL = DenoiserConfig(frame_size=8, patch_size=4, hidden_dim=16, n_blocks=1, time_embed_dim=8)
SMALL_SR = UpscalerConfig(channels=4, frame_size=8)
SOURCE = StructuredPrompt('bounce', ('square', 'bright'), ('flat', 'dark'))
TARGET = StructuredPrompt('bounce', ('circle', 'dim'), ('stripes', 'grey'))


def small_bundle():
    s = make_linear_schedule(100, 1e-4, 0.02)
    return CascadeBundle(
        keyframe_params=init_denoiser(SMALL, 0),
        interp_params=init_denoiser(SMALL, 1),
        sr_params=init_upscaler(SMALL_SR, 2),
        schedule=s,
    )


class InterpolationTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.params = init_denoiser(SMALL, 3)
        self.keyframes = torch.rand(8, SMALL.frame_dim, generator=torch.Generator().manual_seed(0))

    def test_output_layout(self):
        self.assertEqual(OUTPUT_FRAMES, 29)
        self.assertEqual([i + 1 for i in KEYFRAME_INDEXES], [1, 5, 9, 13, 17, 21, 25, 29])
        out = interpolate_frames(self.keyframes, self.params, self.s, steps=5)
        self.assertEqual(out.shape, (29, SMALL.frame_dim))
        self.assertTrue(torch.equal(out[list(KEYFRAME_INDEXES)], self.keyframes))

    def test_is_deterministic(self):
        first = interpolate_frames(self.keyframes, self.params, self.s, steps=5, seed=1)
        second = interpolate_frames(self.keyframes, self.params, self.s, steps=5, seed=1)
        self.assertTrue(torch.equal(first, second))

    def test_wrong_keyframe_count(self):
        with self.assertRaises(ShapeMismatchError):
            interpolate_frames(self.keyframes[:7], self.params, self.s)
        with self.assertRaises(ShapeMismatchError):
            interpolate_frames(torch.rand(8, 10), self.params, self.s)

    def test_windows_hold_quarter_frame_renders(self):
        self.assertEqual(window_times(2), [2.0, 2.25, 2.5, 2.75, 3.0])
        spec = MotionSpec('translate-right', (4, 2), (0, 1), bounds=(2, 5))
        video, prompt = generate_clip(spec, ('square', 'bright'), ('flat', 'dark'), 4, 0, frame_size=8)
        windows = interpolation_windows([ClipRecord('c', video, prompt, spec, 0)], frame_size=8)
        self.assertEqual(windows.shape, (3, 5, 64))
        self.assertTrue(torch.equal(windows[:, 0], video[:3]))
        self.assertTrue(torch.equal(windows[:, -1], video[1:]))

    def test_short_training_run(self):
        cfg = InterpolationConfig(steps=2, batch_size=4, train_clips=2)
        first = train_interpolator(cfg, seed=0, denoiser_config=SMALL, schedule=self.s, frame_count=4)
        second = train_interpolator(cfg, seed=0, denoiser_config=SMALL, schedule=self.s, frame_count=4)
        self.assertEqual(len(first.losses), 2)
        self.assertEqual(first.losses, second.losses)


class UpscalerTests(SimpleTestCase):

    def setUp(self):
        self.params = init_upscaler(SMALL_SR, 0)
        self.video = torch.rand(5, 64, generator=torch.Generator().manual_seed(1))

    def test_output_has_four_times_the_pixels(self):
        self.assertEqual(super_resolve(self.video, self.params).shape, (5, 256))
        self.assertEqual(super_resolve(self.video[None], self.params).shape, (1, 5, 256))

    def test_downsampling_recovers_the_input(self):
        out = super_resolve(self.video, self.params)
        pooled = downsample(out.reshape(5, 1, 16, 16)).reshape(5, 64)
        self.assertLess(float((pooled - self.video).abs().max()), 1e-5)

    def test_constant_frame_stays_constant(self):
        out = super_resolve(torch.full((2, 64), 0.3), self.params)
        self.assertTrue(torch.allclose(out, torch.full_like(out, 0.3), atol=1e-6, rtol=0))

    def test_resolution_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            super_resolve(torch.rand(3, 256), self.params)
        with self.assertRaises(InvalidRangeError):
            UpscalerConfig(channels=0)

    def test_training_pairs_are_consistent(self):
        low, high = upscaler_pairs(build_corpus(2, seed=0, frame_count=4, frame_size=8), frame_size=8)
        self.assertEqual(low.shape, (8, 64))
        self.assertEqual(high.shape, (8, 256))

    def test_short_training_run(self):
        cfg = UpscalerTrainingConfig(steps=2, batch_size=4, train_clips=2)
        result = train_upscaler(cfg, seed=0, upscaler_config=SMALL_SR, frame_count=4)
        self.assertEqual(len(result.losses), 2)

    def test_checkpoint_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            save_checkpoint(self.params, tmp, 'upscaler')
            loaded, _ = load_checkpoint(tmp, expected_kind='upscaler')
        self.assertTrue(torch.equal(super_resolve(self.video, loaded), super_resolve(self.video, self.params)))


class PipelineTests(SimpleTestCase):

    def setUp(self):
        spec = make_motion_spec('bounce', 8, 0, frame_size=8)
        self.source, _ = generate_clip(spec, ('square', 'bright'), ('flat', 'dark'), 8, 0, frame_size=8)

    def test_end_to_end_shape(self):
        bundle = small_bundle()
        result = vmc_pipeline(self.source, SOURCE, TARGET, bundle, PipelineConfig(inversion_steps=5, interp_steps=3))
        self.assertEqual(result.keyframes.shape, (8, 64))
        self.assertEqual(result.interpolated.shape, (29, 64))
        self.assertEqual(result.final.shape, (29, 256))
        self.assertTrue(torch.equal(result.interpolated[list(KEYFRAME_INDEXES)], result.keyframes))
        self.assertEqual(result.frozen_hashes, bundle.frozen_hashes)
        self.assertEqual(set(result.timings), {'keyframes', 'interpolation', 'super_resolution'})

    def test_is_deterministic(self):
        cfg = PipelineConfig(inversion_steps=5, interp_steps=3, seed=4)
        first = vmc_pipeline(self.source, SOURCE, TARGET, small_bundle(), cfg)
        second = vmc_pipeline(self.source, SOURCE, TARGET, small_bundle(), cfg)
        self.assertTrue(torch.equal(first.final, second.final))

    def test_frozen_stage_change_is_fatal(self):
        bundle = small_bundle()
        with torch.no_grad():
            bundle.sr_params.detail[0].weight.add_(1.0)
        with self.assertRaises(FrozenStageError):
            bundle.verify_frozen()
        with self.assertRaises(FrozenStageError):
            vmc_pipeline(self.source, SOURCE, TARGET, bundle, PipelineConfig(inversion_steps=5, interp_steps=3))

    def test_swapping_keyframe_params_keeps_the_frozen_record(self):
        bundle = small_bundle()
        swapped = bundle.with_keyframe_params(init_denoiser(SMALL, 9))
        self.assertEqual(swapped.frozen_hashes, bundle.frozen_hashes)
        self.assertFalse(any(p.requires_grad for p in swapped.interp_params.parameters()))

    def test_config(self):
        with self.assertRaises(InvalidRangeError):
            PipelineConfig(invert_with='target')
        self.assertEqual(PipelineConfig.from_dict(settings.VMC['pipeline']).inversion_steps, 50)


@tag('slow')
@skipUnless(settings.VMC_SLOW_TESTS, 'slow cascade training')
class TrainedCascadeTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.s = make_linear_schedule(100, 1e-4, 0.02)
        cfg = InterpolationConfig(steps=3000, learning_rate=1e-3, train_clips=128)
        cls.interp = train_interpolator(cfg, seed=0, schedule=cls.s).params
        cls.sr = train_upscaler(UpscalerTrainingConfig(steps=500, train_clips=32), seed=0).params

    def test_static_gap_stays_static(self):
        spec = MotionSpec('translate-right', (7, 7), (0, 0))
        video, _ = generate_clip(spec, ('circle', 'bright'), ('flat', 'dark'), 8, 0)
        out = interpolate_frames(video, self.interp, self.s, steps=25)
        self.assertLess(float((out - video[0]).abs().mean()), 0.05)

    def test_inserted_centroids_lie_between_keyframes(self):
        spec = MotionSpec('translate-right', (7, 2), (0, 1))
        video, _ = generate_clip(spec, ('square', 'bright'), ('flat', 'black'), 8, 0)
        track = extract_centroid_track(interpolate_frames(video, self.interp, self.s, steps=25)).track
        for gap in range(7):
            left, right = float(track[4 * gap, 1]), float(track[4 * gap + 4, 1])
            for j in range(1, 4):
                self.assertTrue(left - 0.25 <= float(track[4 * gap + j, 1]) <= right + 0.25)

    def test_trained_upscaler_keeps_consistency(self):
        frames = torch.rand(4, 256, generator=torch.Generator().manual_seed(0))
        pooled = downsample(super_resolve(frames, self.sr).reshape(4, 1, 32, 32)).reshape(4, 256)
        self.assertLess(float((pooled - frames).abs().mean()), 0.05)
