import json
import tempfile
from pathlib import Path

import torch
from django.test import SimpleTestCase

from conditioning.prompts import StructuredPrompt, encode_prompt
from vmc_desk.errors import CheckpointError, InvalidRangeError, ShapeMismatchError

from .checkpoints import (
    MANIFEST_FILE, WEIGHTS_FILE, load_checkpoint, module_hash,
    parameter_hashes, read_manifest, save_checkpoint,
)
from .gradients import finite_difference_check, gradient, sample_coordinates
from .network import DenoiserConfig, ParameterLabel, init_denoiser, label_for, parse_labels, predict_noise

SMALL = DenoiserConfig(frame_size=8, patch_size=4, hidden_dim=16, n_blocks=2, time_embed_dim=8)
PROMPT = StructuredPrompt('orbit', ('ring', 'vivid'), ('dots', 'grey'))


class DenoiserConfigTests(SimpleTestCase):

    def test_derived_sizes(self):
        cfg = DenoiserConfig()
        self.assertEqual(cfg.frame_dim, 256)
        self.assertEqual(cfg.tokens_per_frame, 16)
        self.assertEqual(cfg.patch_dim, 16)

    def test_invalid_sizes(self):
        with self.assertRaises(InvalidRangeError):
            DenoiserConfig(hidden_dim=0)
        with self.assertRaises(InvalidRangeError):
            DenoiserConfig(frame_size=10, patch_size=4)

    def test_round_trips_through_dict(self):
        self.assertEqual(DenoiserConfig.from_dict(SMALL.to_dict()), SMALL)


class InitAndPartitionTests(SimpleTestCase):

    def test_same_seed_gives_identical_bytes(self):
        self.assertEqual(parameter_hashes(init_denoiser(SMALL, 3)), parameter_hashes(init_denoiser(SMALL, 3)))

    def test_different_seeds_differ(self):
        self.assertNotEqual(module_hash(init_denoiser(SMALL, 3)), module_hash(init_denoiser(SMALL, 4)))

    def test_init_leaves_global_rng_alone(self):
        torch.manual_seed(11)
        expected = torch.rand(3)
        torch.manual_seed(11)
        init_denoiser(SMALL, 0)
        self.assertTrue(torch.equal(torch.rand(3), expected))

    def test_partition_is_total_and_disjoint(self):
        params = init_denoiser(SMALL, 0)
        partition = params.partition()
        names = [name for name, _ in params.named_parameters()]
        self.assertEqual(sorted(partition), sorted(names))
        self.assertTrue(all(isinstance(label, ParameterLabel) for label in partition.values()))
        temporal = sorted(n for n, label in partition.items() if label is ParameterLabel.TEMPORAL_ATTENTION)
        expected = sorted(f'blocks.{i}.temporal_attn.to_{x}.weight' for i in range(2) for x in 'qkv')
        self.assertEqual(temporal, expected)

    def test_labels(self):
        self.assertIs(label_for('blocks.1.spatial_attn.to_k.weight'), ParameterLabel.SPATIAL_ATTENTION)
        self.assertIs(label_for('cond_proj.bias'), ParameterLabel.CONDITIONING)
        self.assertIs(label_for('blocks.0.temporal_attn.to_out.weight'), ParameterLabel.OTHER)
        self.assertEqual(parse_labels(['conditioning']), {ParameterLabel.CONDITIONING})
        with self.assertRaises(InvalidRangeError):
            parse_labels(['everything'])


class PredictNoiseTests(SimpleTestCase):

    def setUp(self):
        self.params = init_denoiser(SMALL, 0).double()
        self.c = encode_prompt(PROMPT)
        self.gen = torch.Generator().manual_seed(0)

    def video(self, frames):
        return torch.rand(frames, SMALL.frame_dim, dtype=torch.float64, generator=self.gen)

    def test_output_shape(self):
        for frames in (2, 8):
            v = self.video(frames)
            self.assertEqual(predict_noise(self.params, v, 10, self.c).shape, v.shape)
        full = init_denoiser(DenoiserConfig(), 0)
        v = torch.rand(8, 256)
        self.assertEqual(full(v, 50, self.c).shape, (8, 256))

    def test_batched_matches_unbatched(self):
        v = torch.stack([self.video(4), self.video(4)])
        t = torch.tensor([5, 90])
        batched = self.params(v, t, self.c)
        for i in range(2):
            single = self.params(v[i], int(t[i]), self.c)
            self.assertTrue(torch.allclose(batched[i], single, atol=1e-12, rtol=0))

    def test_is_a_pure_function(self):
        v = self.video(6)
        self.assertTrue(torch.equal(self.params(v, 20, self.c), self.params(v, 20, self.c)))

    def test_shape_errors(self):
        with self.assertRaises(ShapeMismatchError):
            self.params(torch.rand(4, 10, dtype=torch.float64), 5, self.c)
        with self.assertRaises(ShapeMismatchError):
            self.params(self.video(8)[:1], 5, self.c)
        with self.assertRaises(ShapeMismatchError):
            self.params(self.video(4), 5, torch.zeros(7))

    def test_zeroed_temporal_values_factorise_over_frames(self):
        with torch.no_grad():
            for block in self.params.blocks:
                block.temporal_attn.to_v.weight.zero_()
        v = self.video(8)
        permuted = torch.cat([v[:1], v[1:][torch.tensor([6, 2, 0, 5, 1, 3, 4])]])
        first = self.params(v, 40, self.c)[0]
        second = self.params(permuted, 40, self.c)[0]
        self.assertTrue(torch.allclose(first, second, atol=1e-12, rtol=0))

    def test_temporal_path_carries_information_between_frames(self):
        v = self.video(8)
        perturbed = v.clone()
        perturbed[-1] += 0.5
        first = self.params(v, 40, self.c)[0]
        second = self.params(perturbed, 40, self.c)[0]
        self.assertGreater(float((first - second).abs().max()), 1e-8)


class GradientTests(SimpleTestCase):

    def setUp(self):
        self.params = init_denoiser(SMALL, 1).double()

    def test_half_squared_norm(self):
        grads = gradient(self.params, lambda p: 0.5 * (p.head.weight ** 2).sum())
        self.assertTrue(torch.equal(grads['head.weight'], self.params.head.weight))
        self.assertEqual(float(grads['patch_embed.weight'].abs().sum()), 0.0)

    def test_constant_loss(self):
        grads = gradient(self.params, lambda p: torch.tensor(3.0))
        self.assertTrue(all(float(g.abs().sum()) == 0.0 for g in grads.values()))

    def test_label_filter(self):
        grads = gradient(self.params, lambda p: self.params(torch.ones(3, SMALL.frame_dim), 5, encode_prompt(PROMPT)).sum(),
                         labels={ParameterLabel.TEMPORAL_ATTENTION})
        self.assertEqual(len(grads), 6)

    def test_coordinates_lie_in_the_selected_tensors(self):
        coordinates = sample_coordinates(self.params, {ParameterLabel.TEMPORAL_ATTENTION}, 50, seed=0)
        self.assertEqual(len(coordinates), 50)
        sizes = dict((n, p.numel()) for n, p in self.params.named_parameters())
        for name, index in coordinates:
            self.assertIs(label_for(name), ParameterLabel.TEMPORAL_ATTENTION)
            self.assertTrue(0 <= index < sizes[name])
        self.assertEqual(coordinates, sample_coordinates(self.params, {ParameterLabel.TEMPORAL_ATTENTION}, 50, seed=0))

    def test_finite_differences_on_a_quadratic(self):
        target = torch.randn_like(self.params.head.weight)

        def closure(p):
            return ((p.head.weight - target) ** 2).sum()

        check = finite_difference_check(self.params, closure, [('head.weight', i) for i in range(5)])
        self.assertLess(check.max_relative, 1e-8)
        for row in check.rows:
            self.assertAlmostEqual(row['analytic'], row['numeric'], places=6)

    def test_small_gradients_are_judged_on_their_own_scale(self):
        # the detached copy shares storage, so central differences see twice the autograd slope
        def closure(p):
            return 5e-9 * (p.head.weight + p.head.weight.detach()).sum()

        check = finite_difference_check(self.params, closure, [('head.weight', i) for i in range(3)])
        for row in check.rows:
            self.assertAlmostEqual(row['analytic'], 5e-9, delta=1e-15)
            self.assertAlmostEqual(row['numeric'], 1e-8, delta=1e-12)
        self.assertAlmostEqual(check.max_relative, 0.5, places=3)
        self.assertAlmostEqual(check.max_absolute, 5e-9, delta=1e-12)
        self.assertEqual(len(check.failures(rtol=1e-4, atol=1e-9)), 3)
        self.assertFalse(check.passes())

    def test_zero_gradients_pass(self):
        check = finite_difference_check(self.params, lambda p: (p.head.bias * 0.0).sum(), [('head.bias', 0)])
        self.assertEqual(check.rows[0]['relative'], 0.0)
        self.assertTrue(check.passes())
        self.assertTrue(check.to_dict()['passed'])


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.params = init_denoiser(SMALL, 2)
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name) / 'ckpt'

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_and_load(self):
        manifest = save_checkpoint(self.params, self.directory, 'denoiser', provenance={'seed': 2})
        loaded, stored = load_checkpoint(self.directory, expected_kind='denoiser', expected_hash=manifest['content_hash'])
        self.assertEqual(parameter_hashes(loaded), parameter_hashes(self.params))
        self.assertEqual(stored['provenance'], {'seed': 2})
        self.assertEqual(loaded.config, SMALL)
        labels = {entry['label'] for entry in stored['tensors'].values()}
        self.assertIn('temporal_attention', labels)
        self.assertEqual(read_manifest(self.directory)['kind'], 'denoiser')

    def test_missing_checkpoint(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.directory)

    def test_wrong_kind(self):
        save_checkpoint(self.params, self.directory, 'denoiser')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.directory, expected_kind='upscaler')
        with self.assertRaises(CheckpointError):
            save_checkpoint(self.params, self.directory, 'optimizer')

    def test_tampered_weights(self):
        save_checkpoint(self.params, self.directory, 'denoiser')
        tensors = torch.load(self.directory / WEIGHTS_FILE)
        tensors['head.bias'] = tensors['head.bias'] + 1.0
        torch.save(tensors, self.directory / WEIGHTS_FILE)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.directory)

    def test_unexpected_hash(self):
        save_checkpoint(self.params, self.directory, 'denoiser')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.directory, expected_hash='0' * 64)

    def test_manifest_is_json(self):
        save_checkpoint(self.params, self.directory, 'interpolator')
        data = json.loads((self.directory / MANIFEST_FILE).read_text())
        self.assertEqual(data['config'], SMALL.to_dict())
        self.assertEqual(data['tensors']['head.weight']['shape'], [16, 16])
