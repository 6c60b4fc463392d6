import csv
import tempfile
from pathlib import Path
from unittest import skipUnless

import torch
from django.conf import settings
from django.test import SimpleTestCase, tag
from torch import nn

from conditioning.prompts import StructuredPrompt, encode_prompt
from denoiser.gradients import finite_difference_check, sample_coordinates
from denoiser.network import DenoiserConfig, ParameterLabel, init_denoiser
from schedule.kernels import NoiseSchedule, forward_sample, make_linear_schedule
from vmc_desk.errors import ConfigError, EmptyCorpusError, InvalidRangeError, ShapeMismatchError

from .sampling import (
    SamplerConfig, ddim_invert, ddim_step, ddpm_step, sample,
    timestep_grid, tweedie_video,
)
from .training import TrainingConfig, epsilon_matching_loss, train_base, write_loss_csv

SMALL = DenoiserConfig(frame_size=8, patch_size=4, hidden_dim=16, n_blocks=1, time_embed_dim=8)
PROMPT = StructuredPrompt('translate-right', ('circle', 'bright'), ('flat', 'dark'))


class ZeroDenoiser(nn.Module):
    """
    Predicts zero noise everywhere
    """

    def __init__(self, frame_dim=16):
        super().__init__()
        self.config = type('Config', (), {'frame_dim': frame_dim})()
        self.weight = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, v_t, t, c):
        return torch.zeros_like(v_t) + 0.0 * self.weight


class FixedDenoiser(ZeroDenoiser):
    """
    Returns a stored tensor whatever the input
    """

    def __init__(self, output):
        super().__init__(output.shape[-1])
        self.output = output

    def forward(self, v_t, t, c):
        return self.output + 0.0 * self.weight


def small_corpus(count, seed, frames=4):
    gen = torch.Generator().manual_seed(seed)
    return [(torch.rand(frames, SMALL.frame_dim, generator=gen), PROMPT) for _ in range(count)]


class TimestepGridTests(SimpleTestCase):

    def test_grid_is_ascending_and_ends_at_T(self):
        grid = timestep_grid(100, 50)
        self.assertEqual(len(grid), 50)
        self.assertEqual(grid[0], 2)
        self.assertEqual(grid[-1], 100)
        self.assertEqual(timestep_grid(100, 100), list(range(1, 101)))
        self.assertEqual(timestep_grid(10, 3), [3, 6, 10])

    def test_steps_out_of_range(self):
        with self.assertRaises(InvalidRangeError):
            timestep_grid(100, 0)
        with self.assertRaises(InvalidRangeError):
            timestep_grid(100, 101)

    def test_sampler_config_validates(self):
        with self.assertRaises(InvalidRangeError):
            SamplerConfig(eta=1.5)
        with self.assertRaises(InvalidRangeError):
            SamplerConfig(steps=0)
        cfg = SamplerConfig.from_dict({'eta': 0.0, 'steps': 10, 'frame_count': 8, 'unrelated': 1}, seed=3)
        self.assertEqual((cfg.steps, cfg.seed), (10, 3))


class TweedieTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        gen = torch.Generator().manual_seed(0)
        self.v0 = torch.rand(8, 16, dtype=torch.float64, generator=gen)
        self.eps = torch.randn(8, 16, dtype=torch.float64, generator=gen)

    def test_exact_noise_recovers_clean_video(self):
        for t in (1, 37, 100):
            v_t = forward_sample(self.v0, t, self.eps, self.s)
            self.assertTrue(torch.allclose(tweedie_video(v_t, self.eps, t, self.s), self.v0, atol=1e-13, rtol=0))

    def test_zero_prediction_rescales(self):
        v_t = forward_sample(self.v0, 60, self.eps, self.s)
        expected = v_t / self.s.alpha_bar[59].sqrt()
        self.assertTrue(torch.equal(tweedie_video(v_t, torch.zeros_like(v_t), 60, self.s), expected))

    def test_matches_naive_loop(self):
        t = 45
        ab = float(self.s.alpha_bar[t - 1])
        out = tweedie_video(self.v0, self.eps, t, self.s)
        for n in range(8):
            for i in range(16):
                expected = (float(self.v0[n, i]) - (1 - ab) ** 0.5 * float(self.eps[n, i])) / ab ** 0.5
                self.assertAlmostEqual(float(out[n, i]), expected, places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            tweedie_video(self.v0, self.eps[:4], 10, self.s)


class ReverseStepTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        gen = torch.Generator().manual_seed(1)
        self.v0 = torch.rand(4, 16, dtype=torch.float64, generator=gen)
        self.eps = torch.randn(4, 16, dtype=torch.float64, generator=gen)
        self.noise = torch.randn(4, 16, dtype=torch.float64, generator=gen)

    def test_ddpm_matches_naive_loop(self):
        t = 70
        a, ab, bt = (float(self.s.alpha[t - 1]), float(self.s.alpha_bar[t - 1]), float(self.s.beta_tilde[t - 1]))
        out = ddpm_step(self.v0, self.eps, t, self.s, self.noise)
        for n in range(4):
            for i in range(16):
                mean = (float(self.v0[n, i]) - (1 - a) / (1 - ab) ** 0.5 * float(self.eps[n, i])) / a ** 0.5
                self.assertAlmostEqual(float(out[n, i]), mean + bt * float(self.noise[n, i]), places=12)

    def test_ddpm_without_noise_is_the_mean(self):
        zero = torch.zeros_like(self.noise)
        first = ddpm_step(self.v0, self.eps, 30, self.s, zero)
        second = ddpm_step(self.v0, self.eps, 30, self.s, zero)
        self.assertTrue(torch.equal(first, second))
        # no posterior noise on the last step
        self.assertTrue(torch.equal(ddpm_step(self.v0, self.eps, 1, self.s, self.noise),
                                    ddpm_step(self.v0, self.eps, 1, self.s, zero)))

    def test_ddpm_degenerate_step_is_identity(self):
        s = NoiseSchedule(beta=torch.tensor([0.5, 1e-300], dtype=torch.float64))
        out = ddpm_step(self.v0, self.eps, 2, s, torch.zeros_like(self.noise))
        self.assertTrue(torch.equal(out, self.v0))

    def test_ddim_exact_noise_lands_on_forward_marginal(self):
        for t, t_prev in ((100, 50), (40, 39), (10, 0)):
            v_t = forward_sample(self.v0, t, self.eps, self.s)
            landed = ddim_step(v_t, self.eps, t, t_prev, self.s, eta=0.0)
            ab_prev = self.s.gather('alpha_bar', t_prev, allow_zero=True)
            expected = ab_prev.sqrt() * self.v0 + (1 - ab_prev).sqrt() * self.eps
            self.assertTrue(torch.allclose(landed, expected, atol=1e-12, rtol=0))

    def test_ddim_matches_naive_loop(self):
        t, t_prev, eta = 80, 60, 0.7
        ab, ab_prev = float(self.s.alpha_bar[t - 1]), float(self.s.alpha_bar[t_prev - 1])
        sigma = eta * float(self.s.beta_tilde[t - 1])
        out = ddim_step(self.v0, self.eps, t, t_prev, self.s, eta, self.noise)
        for n in range(4):
            for i in range(16):
                x0 = (float(self.v0[n, i]) - (1 - ab) ** 0.5 * float(self.eps[n, i])) / ab ** 0.5
                expected = (ab_prev ** 0.5 * x0 + (1 - ab_prev - sigma ** 2) ** 0.5 * float(self.eps[n, i])
                            + sigma * float(self.noise[n, i]))
                self.assertAlmostEqual(float(out[n, i]), expected, places=12)

    def test_ddim_eta_zero_ignores_noise(self):
        first = ddim_step(self.v0, self.eps, 50, 25, self.s, 0.0, self.noise)
        second = ddim_step(self.v0, self.eps, 50, 25, self.s, 0.0)
        self.assertTrue(torch.equal(first, second))

    def test_ddim_invalid_arguments(self):
        with self.assertRaises(InvalidRangeError):
            ddim_step(self.v0, self.eps, 10, 10, self.s, 0.0)
        with self.assertRaises(InvalidRangeError):
            ddim_step(self.v0, self.eps, 10, 5, self.s, 1.2)
        with self.assertRaises(ConfigError):
            ddim_step(self.v0, self.eps, 10, 5, self.s, 0.5)

    def test_ddim_full_stochasticity_on_a_steep_schedule(self):
        s = NoiseSchedule(beta=torch.tensor([0.001, 0.999, 0.999], dtype=torch.float64))
        out = ddim_step(self.v0, self.eps, 3, 2, s, 1.0, self.noise)
        self.assertTrue(bool(torch.isfinite(out).all()))


class InversionAndSamplingTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.c = encode_prompt(PROMPT)
        self.video = torch.rand(8, SMALL.frame_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(2))

    def test_zero_predictor_inversion_is_a_rescaling(self):
        video = self.video[:, :16]
        result = ddim_invert(ZeroDenoiser(), video, self.c, 50, self.s)
        expected = video * self.s.alpha_bar[-1].sqrt()
        self.assertTrue(torch.allclose(result.latent, expected, atol=1e-14, rtol=1e-13))
        self.assertEqual(result.grid, timestep_grid(100, 50))
        self.assertEqual(sorted(result.latents), [0] + result.grid)

    def test_zero_predictor_round_trip_is_exact(self):
        video = self.video[:, :16]
        result = ddim_invert(ZeroDenoiser(), video, self.c, 20, self.s)
        back = sample(ZeroDenoiser(), self.c, SamplerConfig(steps=20), self.s, init_latent=result.latent)
        self.assertTrue(torch.allclose(back, video, atol=1e-13, rtol=0))

    def test_inversion_is_deterministic(self):
        params = init_denoiser(SMALL, 0).double()
        first = ddim_invert(params, self.video, self.c, 10, self.s).latent
        second = ddim_invert(params, self.video, self.c, 10, self.s).latent
        self.assertTrue(torch.equal(first, second))

    def test_sampling_is_deterministic_and_shaped(self):
        params = init_denoiser(SMALL, 0)
        cfg = SamplerConfig(steps=10, seed=5, frame_count=6)
        first = sample(params, self.c, cfg, self.s)
        second = sample(params, self.c, cfg, self.s)
        self.assertEqual(first.shape, (6, SMALL.frame_dim))
        self.assertTrue(torch.equal(first, second))

    def test_variance_across_seeds_grows_with_eta(self):
        params = init_denoiser(SMALL, 1).double()
        latent = torch.randn(4, SMALL.frame_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
        variances = []
        for eta in (0.0, 0.5, 1.0):
            outputs = torch.stack([
                sample(params, self.c, SamplerConfig(eta=eta, steps=25, seed=seed, frame_count=4), self.s, init_latent=latent)
                for seed in range(32)
            ])
            variances.append(float(outputs.var(0).mean()))
        self.assertEqual(variances[0], 0.0)
        self.assertLess(variances[0], variances[1])
        self.assertLess(variances[1], variances[2])


class EpsilonMatchingLossTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        gen = torch.Generator().manual_seed(4)
        self.v0 = torch.rand(8, 16, dtype=torch.float64, generator=gen)
        self.eps = torch.randn(8, 16, dtype=torch.float64, generator=gen)
        self.c = encode_prompt(PROMPT)

    def test_exact_prediction_gives_zero(self):
        loss = epsilon_matching_loss(FixedDenoiser(self.eps), self.v0, 30, self.eps, self.c, self.s)
        self.assertEqual(float(loss), 0.0)

    def test_zero_prediction_gives_second_moment(self):
        loss = epsilon_matching_loss(ZeroDenoiser(), self.v0, 30, self.eps, self.c, self.s)
        self.assertAlmostEqual(float(loss), float((self.eps ** 2).mean()), places=14)

    def test_matches_naive_loop(self):
        pred = torch.randn(8, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(5))
        loss = epsilon_matching_loss(FixedDenoiser(pred), self.v0, 30, self.eps, self.c, self.s)
        total = sum((float(pred[n, i]) - float(self.eps[n, i])) ** 2 for n in range(8) for i in range(16))
        self.assertAlmostEqual(float(loss), total / 128, places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            epsilon_matching_loss(ZeroDenoiser(), self.v0, 30, self.eps[:, :8], self.c, self.s)

    def test_gradient_matches_finite_differences(self):
        params = init_denoiser(SMALL, 2).double()
        gen = torch.Generator().manual_seed(6)
        v0 = torch.rand(4, SMALL.frame_dim, dtype=torch.float64, generator=gen)
        eps = torch.randn(4, SMALL.frame_dim, dtype=torch.float64, generator=gen)

        def closure(p):
            return epsilon_matching_loss(p, v0, 40, eps, self.c, self.s)

        coordinates = sample_coordinates(params, {ParameterLabel.TEMPORAL_ATTENTION}, 50, seed=0)
        check = finite_difference_check(params, closure, coordinates)
        self.assertEqual(len(check.rows), 50)
        self.assertEqual(check.failures(rtol=1e-4), [])


class TrainBaseTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)

    def test_empty_corpus(self):
        with self.assertRaises(EmptyCorpusError):
            train_base([], TrainingConfig(steps=1), seed=0, denoiser_config=SMALL, schedule=self.s)

    def test_mixed_shapes(self):
        corpus = small_corpus(2, 0) + [(torch.rand(5, SMALL.frame_dim), PROMPT)]
        with self.assertRaises(ShapeMismatchError):
            train_base(corpus, TrainingConfig(steps=1), seed=0, denoiser_config=SMALL, schedule=self.s)

    def test_seeded_runs_are_identical(self):
        cfg = TrainingConfig(steps=5, batch_size=4, learning_rate=1e-3)
        corpus = small_corpus(8, 1)
        first = train_base(corpus, cfg, seed=7, denoiser_config=SMALL, schedule=self.s)
        second = train_base(corpus, cfg, seed=7, denoiser_config=SMALL, schedule=self.s)
        self.assertEqual(len(first.losses), 5)
        self.assertEqual(first.losses, second.losses)
        for (name, a), (_, b) in zip(first.params.named_parameters(), second.params.named_parameters()):
            self.assertTrue(torch.equal(a, b), name)

    def test_every_parameter_is_trained(self):
        cfg = TrainingConfig(steps=2, batch_size=4, learning_rate=1e-3)
        result = train_base(small_corpus(4, 2), cfg, seed=0, denoiser_config=SMALL, schedule=self.s)
        initial = init_denoiser(SMALL, 0)
        changed = [
            not torch.equal(a, b)
            for a, b in zip(result.params.parameters(), initial.parameters())
        ]
        self.assertTrue(all(changed))

    def test_loss_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'loss.csv'
            write_loss_csv(path, [0.5, 0.25])
            with path.open() as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ['step', 'loss'])
        self.assertEqual([row[0] for row in rows[1:]], ['1', '2'])
        self.assertAlmostEqual(float(rows[2][1]), 0.25)

    @tag('slow')
    @skipUnless(settings.VMC_SLOW_TESTS, 'slow training curve')
    def test_training_curve_decreases(self):
        from corpus.generator import build_corpus, training_pairs

        records = build_corpus(64, seed=0)
        cfg = TrainingConfig(steps=200, batch_size=16, learning_rate=1e-3)
        result = train_base(training_pairs(records), cfg, seed=0, schedule=self.s)
        first, last = result.losses[:100], result.losses[-100:]
        self.assertLess(sum(last) / 100, 0.8 * sum(first) / 100)


@tag('slow')
@skipUnless(settings.VMC_SLOW_TESTS, 'slow base training')
class TrainedRoundTripTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        from corpus.generator import build_corpus, training_pairs

        super().setUpClass()
        cls.s = make_linear_schedule(100, 1e-4, 0.02)
        cfg = TrainingConfig(steps=3000, batch_size=16, learning_rate=1e-3)
        cls.params = train_base(training_pairs(build_corpus(256, seed=0)), cfg, seed=0, schedule=cls.s).params
        cls.params.requires_grad_(False)
        cls.records = build_corpus(3, seed=7)

    def test_invert_then_sample_reconstructs(self):
        sampler = SamplerConfig(eta=0.0, steps=50, frame_count=8)
        for record in self.records:
            c = encode_prompt(record.prompt)
            latent = ddim_invert(self.params, record.video, c, 50, self.s).latent
            reconstruction = sample(self.params, c, sampler, self.s, init_latent=latent)
            self.assertLess(float((reconstruction - record.video).abs().mean()), 0.05, record.clip_id)

    def test_unchanged_prompt_reconstructs_keyframes(self):
        from cascade.pipeline import CascadeBundle, PipelineConfig, vmc_pipeline
        from cascade.upscaler import UpscalerConfig, init_upscaler

        bundle = CascadeBundle(
            keyframe_params=self.params,
            interp_params=init_denoiser(DenoiserConfig(), 1),
            sr_params=init_upscaler(UpscalerConfig(), 2),
            schedule=self.s,
        )
        cfg = PipelineConfig(inversion_steps=50, invert_with='source', interp_steps=2)
        for record in self.records:
            result = vmc_pipeline(record.video, record.prompt, record.prompt, bundle, cfg)
            self.assertEqual(result.final.shape, (29, 1024))
            self.assertLess(float((result.keyframes - record.video).abs().mean()), 0.05, record.clip_id)
