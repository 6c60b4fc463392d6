import json

import torch
from django.test import SimpleTestCase

from vmc_desk.errors import InvalidRangeError, ShapeMismatchError

from .kernels import (
    NoiseSchedule, forward_sample, make_linear_schedule,
    residual_kernel_params, score_from_epsilon,
)


class LinearScheduleTests(SimpleTestCase):

    def test_two_step_schedule_products(self):
        s = make_linear_schedule(2, 0.5, 0.5)
        self.assertEqual(s.alpha_bar.tolist(), [0.5, 0.25])

    def test_default_schedule_is_strictly_decreasing(self):
        s = make_linear_schedule(100, 1e-4, 0.02)
        expected = torch.prod(1.0 - torch.linspace(1e-4, 0.02, 100, dtype=torch.float64))
        self.assertTrue(bool((s.alpha_bar[1:] < s.alpha_bar[:-1]).all()))
        self.assertTrue(0.0 < float(s.alpha_bar[-1]) < 0.5)
        self.assertAlmostEqual(float(s.alpha_bar[-1]), float(expected), places=14)

    def test_tables_follow_their_definitions(self):
        s = make_linear_schedule(100, 1e-4, 0.02)
        self.assertTrue(torch.equal(s.alpha, 1.0 - s.beta))
        for t in (2, 17, 100):
            expected = (1 - s.alpha_bar[t - 2]) / (1 - s.alpha_bar[t - 1]) * s.beta[t - 1]
            self.assertAlmostEqual(float(s.beta_tilde[t - 1]), float(expected), places=15)
        self.assertEqual(float(s.beta_tilde[0]), 0.0)

    def test_invalid_ranges(self):
        with self.assertRaises(InvalidRangeError):
            make_linear_schedule(1, 1e-4, 0.02)
        with self.assertRaises(InvalidRangeError):
            make_linear_schedule(10, 0.02, 1e-4)
        with self.assertRaises(InvalidRangeError):
            make_linear_schedule(10, 0.0, 0.02)

    def test_json_stores_betas_only(self):
        s = make_linear_schedule(10, 1e-3, 0.05)
        data = json.loads(s.to_json())
        self.assertEqual(set(data), {'T', 'beta'})
        loaded = NoiseSchedule.from_json(s.to_json())
        self.assertTrue(torch.equal(loaded.alpha_bar, s.alpha_bar))

    def test_timestep_bounds(self):
        s = make_linear_schedule(10, 1e-3, 0.05)
        with self.assertRaises(InvalidRangeError):
            s.gather('alpha_bar', 11)
        with self.assertRaises(InvalidRangeError):
            s.gather('beta', 0)
        self.assertEqual(float(s.gather('alpha_bar', 0, allow_zero=True)), 1.0)


class ForwardKernelTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.gen = torch.Generator().manual_seed(0)

    def test_zero_noise_and_zero_signal(self):
        x0 = torch.rand(8, 16, dtype=torch.float64, generator=self.gen)
        eps = torch.randn(8, 16, dtype=torch.float64, generator=self.gen)
        ab = self.s.alpha_bar[39]
        self.assertTrue(torch.equal(forward_sample(x0, 40, torch.zeros_like(x0), self.s), ab.sqrt() * x0))
        self.assertTrue(torch.equal(forward_sample(torch.zeros_like(eps), 40, eps, self.s), (1 - ab).sqrt() * eps))

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            forward_sample(torch.zeros(4), 3, torch.zeros(5), self.s)

    def test_monte_carlo_marginal(self):
        n, d, t = 100_000, 4, 50
        x0 = torch.tensor([0.1, 0.5, 0.9, 0.3], dtype=torch.float64)
        eps = torch.randn(n, d, dtype=torch.float64, generator=self.gen)
        samples = forward_sample(x0.expand(n, d), t, eps, self.s)
        ab = float(self.s.alpha_bar[t - 1])
        sigma = ((1 - ab) / n) ** 0.5
        self.assertTrue(bool(((samples.mean(0) - ab ** 0.5 * x0).abs() < 4 * sigma).all()))
        variance = samples.var(0)
        self.assertTrue(bool(((variance / (1 - ab) - 1).abs() < 0.05).all()))

    def test_batched_timesteps_broadcast(self):
        x0 = torch.rand(3, 8, 16, dtype=torch.float64, generator=self.gen)
        eps = torch.randn(3, 8, 16, dtype=torch.float64, generator=self.gen)
        t = torch.tensor([1, 50, 100])
        batched = forward_sample(x0, t, eps, self.s)
        for i, ti in enumerate(t.tolist()):
            self.assertTrue(torch.allclose(batched[i], forward_sample(x0[i], ti, eps[i], self.s), atol=0, rtol=1e-15))


class ResidualKernelTests(SimpleTestCase):

    def setUp(self):
        self.s = make_linear_schedule(100, 1e-4, 0.02)
        self.gen = torch.Generator().manual_seed(1)

    def test_kernel_parameters(self):
        scale, variance = residual_kernel_params(self.s, 100)
        ab = float(self.s.alpha_bar[-1])
        self.assertAlmostEqual(scale, ab ** 0.5)
        self.assertAlmostEqual(variance, 2 * (1 - ab))
        with self.assertRaises(InvalidRangeError):
            residual_kernel_params(self.s, 0)

    def test_noiseless_limit_has_zero_variance(self):
        s = NoiseSchedule(beta=torch.tensor([1e-300, 0.5], dtype=torch.float64))
        _, variance = residual_kernel_params(s, 1)
        self.assertEqual(variance, 0.0)

    def test_residual_decomposition_is_exact(self):
        x = torch.rand(2, 32, dtype=torch.float64, generator=self.gen)
        eps = torch.randn(2, 32, dtype=torch.float64, generator=self.gen)
        for t in (1, 30, 100):
            ab = self.s.alpha_bar[t - 1]
            lhs = forward_sample(x[1], t, eps[1], self.s) - forward_sample(x[0], t, eps[0], self.s)
            rhs = ab.sqrt() * (x[1] - x[0]) + (1 - ab).sqrt() * (eps[1] - eps[0])
            self.assertTrue(torch.allclose(lhs, rhs, atol=1e-14, rtol=0))

    def test_monte_carlo_residual_variance(self):
        n, d = 100_000, 4
        first = torch.tensor([0.2, 0.4, 0.6, 0.8], dtype=torch.float64)
        second = torch.tensor([0.3, 0.1, 0.9, 0.5], dtype=torch.float64)
        for t in (25, 50, 100):
            eps_a = torch.randn(n, d, dtype=torch.float64, generator=self.gen)
            eps_b = torch.randn(n, d, dtype=torch.float64, generator=self.gen)
            dv = (forward_sample(second.expand(n, d), t, eps_b, self.s)
                  - forward_sample(first.expand(n, d), t, eps_a, self.s))
            _, variance = residual_kernel_params(self.s, t)
            self.assertTrue(bool(((dv.var(0) / variance - 1).abs() < 0.05).all()))


class ScoreTests(SimpleTestCase):

    def test_score_parameterisation(self):
        s = make_linear_schedule(100, 1e-4, 0.02)
        self.assertTrue(torch.equal(score_from_epsilon(torch.zeros(5, dtype=torch.float64), s, 10), torch.zeros(5, dtype=torch.float64)))
        eps = torch.randn(5, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
        recovered = score_from_epsilon(eps, s, 60) * -(1 - s.alpha_bar[59]).sqrt()
        self.assertTrue(torch.allclose(recovered, eps, atol=1e-15, rtol=1e-14))

    def test_unit_vector_at_three_quarters(self):
        s = NoiseSchedule(beta=torch.tensor([0.25, 0.5], dtype=torch.float64))
        e1 = torch.tensor([1.0, 0.0], dtype=torch.float64)
        self.assertTrue(torch.allclose(score_from_epsilon(e1, s, 1), torch.tensor([-2.0, 0.0], dtype=torch.float64)))
