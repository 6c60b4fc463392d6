from unittest import skipUnless

import torch
from django.conf import settings
from django.test import SimpleTestCase, tag

from conditioning.prompts import StructuredPrompt, appearance_invariant, encode_prompt
from denoiser.checkpoints import parameter_hashes
from denoiser.gradients import finite_difference_check, sample_coordinates
from denoiser.network import DenoiserConfig, ParameterLabel, init_denoiser, label_for
from diffusion.sampling import tweedie_video
from schedule.kernels import forward_sample, make_linear_schedule
from vmc_desk.errors import InvalidRangeError, PromptNotInvariantError, ShapeMismatchError

from .adaptation import SPATIAL_AND_CONDITIONING, AdaptConfig, adapt_temporal_attention, distillation_objective
from .residuals import (
    MotionVectors, denoised_motion_estimate, loss_cos, loss_l2_align,
    motion_vectors, predicted_epsilon_residuals,
)

SMALL = DenoiserConfig(frame_size=8, patch_size=4, hidden_dim=16, n_blocks=1, time_embed_dim=8)
SOURCE = StructuredPrompt('diagonal', ('cross', 'medium'), ('checker', 'dusk'))
INVARIANT = appearance_invariant(SOURCE)


def rows(*values):
    return MotionVectors(deltas=torch.tensor(values, dtype=torch.float64))


class MotionVectorTests(SimpleTestCase):

    def test_arithmetic_progression(self):
        f = torch.rand(5, dtype=torch.float64)
        delta = torch.rand(5, dtype=torch.float64)
        mv = motion_vectors(torch.stack([f, f + delta, f + 2 * delta]))
        self.assertEqual(mv.rows, 2)
        self.assertTrue(torch.allclose(mv.deltas, delta.expand(2, 5), atol=1e-15, rtol=0))

    def test_constant_video(self):
        mv = motion_vectors(torch.ones(6, 4))
        self.assertEqual(float(mv.deltas.abs().sum()), 0.0)
        self.assertEqual(mv.zero_norm_rows(), 5)

    def test_stride(self):
        x = torch.arange(12, dtype=torch.float64).reshape(6, 2)
        mv = motion_vectors(x, stride=2)
        self.assertEqual(mv.deltas.shape, (4, 2))
        self.assertTrue(bool((mv.deltas == 4).all()))
        with self.assertRaises(InvalidRangeError):
            motion_vectors(x, stride=6)
        with self.assertRaises(InvalidRangeError):
            motion_vectors(x, stride=0)

    def test_predicted_residuals_match_naive_loop(self):
        eps = torch.randn(7, 9, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        mv = predicted_epsilon_residuals(eps, stride=1, timestep=12)
        self.assertEqual(mv.timestep, 12)
        for n in range(6):
            for i in range(9):
                self.assertEqual(float(mv.deltas[n, i]), float(eps[n + 1, i]) - float(eps[n, i]))
        self.assertEqual(predicted_epsilon_residuals(torch.ones(4, 3)).zero_norm_rows(), 3)


class DenoisedMotionTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.gen = torch.Generator().manual_seed(1)

    def draw(self, *shape):
        return torch.randn(*shape, dtype=torch.float64, generator=self.gen)

    def test_exact_noise_recovers_clean_residuals(self):
        v0, eps = self.draw(8, 16), self.draw(8, 16)
        for t in (1, 50, 100):
            v_t = forward_sample(v0, t, eps, self.s)
            estimate = denoised_motion_estimate(
                motion_vectors(v_t, timestep=t), motion_vectors(eps, timestep=t), t, self.s)
            self.assertEqual(estimate.timestep, 0)
            self.assertTrue(torch.allclose(estimate.deltas, motion_vectors(v0).deltas, atol=1e-12, rtol=0))

    def test_commutes_with_differencing(self):
        v_t, eps_pred = self.draw(8, 16), self.draw(8, 16)
        for t in (3, 64):
            through_frames = motion_vectors(tweedie_video(v_t, eps_pred, t, self.s)).deltas
            through_residuals = denoised_motion_estimate(
                motion_vectors(v_t, timestep=t), predicted_epsilon_residuals(eps_pred, timestep=t), t, self.s).deltas
            self.assertTrue(torch.allclose(through_frames, through_residuals, atol=1e-12, rtol=0))

    def test_matches_naive_loop(self):
        dv, de = self.draw(3, 4), self.draw(3, 4)
        t = 20
        ab = float(self.s.alpha_bar[t - 1])
        out = denoised_motion_estimate(MotionVectors(dv, 1, t), MotionVectors(de, 1, t), t, self.s).deltas
        for n in range(3):
            for i in range(4):
                expected = (float(dv[n, i]) - (1 - ab) ** 0.5 * float(de[n, i])) / ab ** 0.5
                self.assertAlmostEqual(float(out[n, i]), expected, places=12)

    def test_mismatches(self):
        with self.assertRaises(ShapeMismatchError):
            denoised_motion_estimate(MotionVectors(self.draw(3, 4), 1, 5), MotionVectors(self.draw(2, 4), 1, 5), 5, self.s)
        with self.assertRaises(ShapeMismatchError):
            denoised_motion_estimate(MotionVectors(self.draw(3, 4), 1, 5), MotionVectors(self.draw(3, 4), 1, 6), 5, self.s)


class AlignmentLossTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.gen = torch.Generator().manual_seed(2)

    def test_l2_identical_residuals(self):
        mv = motion_vectors(torch.randn(5, 8, dtype=torch.float64, generator=self.gen))
        self.assertEqual(float(loss_l2_align(mv, mv, 40, self.s)), 0.0)

    def test_l2_equals_clean_residual_distance(self):
        worst = 0.0
        for _ in range(100):
            t = int(torch.randint(1, 101, (1,), generator=self.gen))
            video = torch.rand(8, 16, dtype=torch.float64, generator=self.gen)
            eps = torch.randn(8, 16, dtype=torch.float64, generator=self.gen)
            eps_pred = torch.randn(8, 16, dtype=torch.float64, generator=self.gen)
            v_t = forward_sample(video, t, eps, self.s)
            estimate = denoised_motion_estimate(
                motion_vectors(v_t, timestep=t), predicted_epsilon_residuals(eps_pred, timestep=t), t, self.s)
            direct = ((motion_vectors(video).deltas - estimate.deltas) ** 2).sum(-1).mean()
            value = loss_l2_align(motion_vectors(eps, timestep=t), motion_vectors(eps_pred, timestep=t), t, self.s)
            worst = max(worst, float((direct - value).abs() / value))
        self.assertLess(worst, 1e-10)

    def test_l2_weight_follows_schedule(self):
        true = rows([1.0, 0.0])
        pred = rows([0.0, 0.0])
        for t in (1, 10, 100):
            ab = float(self.s.alpha_bar[t - 1])
            self.assertAlmostEqual(float(loss_l2_align(true, pred, t, self.s)), (1 - ab) / ab, places=14)

    def test_cos_reference_values(self):
        x = rows([1.0, 2.0, 3.0], [-1.0, 0.5, 2.0])
        self.assertAlmostEqual(float(loss_cos(x, x)), 0.0, places=9)
        self.assertAlmostEqual(float(loss_cos(x, MotionVectors(-x.deltas))), 2.0, places=9)
        self.assertAlmostEqual(float(loss_cos(rows([1.0, 0.0]), rows([0.0, 3.0]))), 1.0, places=12)

    def test_cos_is_scale_invariant_and_bounded(self):
        x = MotionVectors(torch.randn(7, 10, dtype=torch.float64, generator=self.gen))
        y = MotionVectors(torch.randn(7, 10, dtype=torch.float64, generator=self.gen))
        value = float(loss_cos(x, y))
        self.assertTrue(0.0 <= value <= 2.0)
        scaled = float(loss_cos(MotionVectors(3.5 * x.deltas), MotionVectors(0.2 * y.deltas)))
        self.assertAlmostEqual(value, scaled, places=7)

    def test_cos_zero_rows_stay_finite(self):
        zero = rows([0.0, 0.0], [1.0, 1.0])
        other = rows([1.0, 0.0], [1.0, 1.0])
        value = float(loss_cos(zero, other))
        self.assertAlmostEqual(value, 0.5, places=7)
        self.assertEqual(zero.zero_norm_rows(), 1)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            loss_cos(rows([1.0, 2.0]), rows([1.0, 2.0, 3.0]))

    def test_cos_gradient_matches_finite_differences(self):
        params = init_denoiser(SMALL, 0).double()
        video = torch.rand(6, SMALL.frame_dim, dtype=torch.float64, generator=self.gen)
        eps = torch.randn(6, SMALL.frame_dim, dtype=torch.float64, generator=self.gen)
        c = encode_prompt(INVARIANT)

        def closure(p):
            return distillation_objective(p, video, c, 30, eps, self.s, loss='cos')[0]

        coordinates = sample_coordinates(params, {ParameterLabel.TEMPORAL_ATTENTION}, 50, seed=1)
        check = finite_difference_check(params, closure, coordinates)
        self.assertEqual(check.failures(rtol=1e-4), [])


class AdaptationTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.params = init_denoiser(SMALL, 0)
        self.video = torch.rand(8, SMALL.frame_dim, generator=torch.Generator().manual_seed(3))
        self.cfg = AdaptConfig(steps=5, learning_rate=1e-3)

    def test_config(self):
        self.assertEqual(AdaptConfig().steps, 400)
        self.assertEqual(AdaptConfig().label_set, {ParameterLabel.TEMPORAL_ATTENTION})
        with self.assertRaises(InvalidRangeError):
            AdaptConfig(loss='huber')
        with self.assertRaises(InvalidRangeError):
            AdaptConfig(labels=['nothing'])
        cfg = AdaptConfig.from_dict(settings.VMC['adaptation'], steps=3)
        self.assertEqual((cfg.steps, cfg.loss), (3, 'cos'))

    def test_only_temporal_attention_changes(self):
        before = parameter_hashes(self.params)
        result = adapt_temporal_attention(self.params, self.video, INVARIANT, self.cfg, self.s, seed=0)
        after = parameter_hashes(result.params)
        self.assertEqual(parameter_hashes(self.params), before)
        for name, digest in after.items():
            if label_for(name) is ParameterLabel.TEMPORAL_ATTENTION:
                self.assertNotEqual(digest, before[name], name)
            else:
                self.assertEqual(digest, before[name], name)
        self.assertEqual(len(result.losses), 5)
        self.assertEqual(len(result.diagnostics['trained_tensors']), 3)

    def test_spatial_and_conditioning_arm(self):
        cfg = AdaptConfig(steps=3, learning_rate=1e-3, loss='l2', labels=SPATIAL_AND_CONDITIONING)
        before = parameter_hashes(self.params)
        after = parameter_hashes(adapt_temporal_attention(self.params, self.video, INVARIANT, cfg, self.s, seed=0).params)
        changed = {label_for(name) for name in after if after[name] != before[name]}
        self.assertEqual(changed, {ParameterLabel.SPATIAL_ATTENTION, ParameterLabel.CONDITIONING})

    def test_is_deterministic(self):
        first = adapt_temporal_attention(self.params, self.video, INVARIANT, self.cfg, self.s, seed=4)
        second = adapt_temporal_attention(self.params, self.video, INVARIANT, self.cfg, self.s, seed=4)
        self.assertEqual(first.losses, second.losses)
        self.assertEqual(parameter_hashes(first.params), parameter_hashes(second.params))

    def test_rejects_appearance_prompts(self):
        with self.assertRaises(PromptNotInvariantError):
            adapt_temporal_attention(self.params, self.video, SOURCE, self.cfg, self.s, seed=0)
        cfg = AdaptConfig(steps=1, allow_non_invariant=True)
        self.assertEqual(len(adapt_temporal_attention(self.params, self.video, SOURCE, cfg, self.s, seed=0).losses), 1)

    def test_rejects_short_or_mismatched_videos(self):
        with self.assertRaises(ShapeMismatchError):
            adapt_temporal_attention(self.params, self.video[:1], INVARIANT, self.cfg, self.s, seed=0)
        with self.assertRaises(ShapeMismatchError):
            adapt_temporal_attention(self.params, torch.rand(8, 10), INVARIANT, self.cfg, self.s, seed=0)

    def test_static_clip_is_flagged_not_fatal(self):
        static = torch.full((4, SMALL.frame_dim), 0.3)
        result = adapt_temporal_attention(self.params, static, INVARIANT, AdaptConfig(steps=2), self.s, seed=0)
        self.assertEqual(len(result.losses), 2)
        self.assertTrue(all(0.0 <= loss <= 2.0 for loss in result.losses))

    @tag('slow')
    @skipUnless(settings.VMC_SLOW_TESTS, 'slow distillation curve')
    def test_distillation_curve_decreases(self):
        from corpus.generator import build_corpus, training_pairs
        from diffusion.training import TrainingConfig, train_base

        s = make_linear_schedule(100, 1e-4, 0.02)
        base = train_base(training_pairs(build_corpus(128, seed=0)),
                          TrainingConfig(steps=2000, learning_rate=1e-3), seed=0, schedule=s).params
        source = build_corpus(1, seed=99, split='heldout')[0]
        result = adapt_temporal_attention(base, source.video, appearance_invariant(source.prompt),
                                          AdaptConfig(learning_rate=1e-3), s, seed=0)
        leading, trailing = result.losses[:50], result.losses[-50:]
        self.assertLess(sum(trailing) / 50, 0.5 * sum(leading) / 50)
