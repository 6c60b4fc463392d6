import tempfile

import torch
from django.test import SimpleTestCase

from conditioning.vocabulary import MOTIONS, SHAPES
from motion.residuals import motion_vectors
from vmc_desk.errors import CheckpointError, EmptyCorpusError, TrajectoryError, UnknownCategoryError

from .generator import (
    MotionSpec, build_corpus, classify_track, extract_centroid_track, generate_clip,
    heldout_shape, is_heldout, make_motion_spec, render_frames, reverse_clip, training_pairs,
)
from .storage import find_clip, load_video, read_corpus, save_video, write_corpus

APPEARANCE = ('square', 'bright')
BACKGROUND = ('stripes', 'grey')


class MotionSpecTests(SimpleTestCase):

    def test_every_class_stays_in_bounds(self):
        for motion in MOTIONS:
            for seed in range(10):
                spec = make_motion_spec(motion, 8, seed)
                track = spec.trajectory(torch.arange(0, 7.01, 0.25))
                self.assertTrue(bool(((track >= 2) & (track <= 13)).all()), (motion, seed))

    def test_too_many_frames_for_a_translation(self):
        with self.assertRaises(TrajectoryError):
            make_motion_spec('translate-right', 13, 0)

    def test_out_of_bounds_spec_is_rejected(self):
        spec = MotionSpec('translate-right', (5, 10), (0, 1))
        with self.assertRaises(TrajectoryError):
            generate_clip(spec, APPEARANCE, BACKGROUND, 8, 0)

    def test_unknown_categories(self):
        with self.assertRaises(UnknownCategoryError):
            make_motion_spec('moonwalk', 8, 0)
        spec = make_motion_spec('walk', 8, 0)
        with self.assertRaises(UnknownCategoryError):
            generate_clip(spec, ('blob', 'bright'), BACKGROUND, 8, 0)

    def test_round_trips_through_dict(self):
        spec = make_motion_spec('orbit', 8, 3)
        self.assertEqual(MotionSpec.from_dict(spec.to_dict()), spec)


class GenerateClipTests(SimpleTestCase):

    def test_translate_right_moves_one_pixel_per_frame(self):
        spec = MotionSpec('translate-right', (7, 3), (0, 1))
        video, prompt = generate_clip(spec, APPEARANCE, BACKGROUND, 8, 0)
        self.assertEqual(video.shape, (8, 256))
        self.assertEqual(prompt.motion, 'translate-right')
        self.assertEqual(prompt.appearance, APPEARANCE)
        self.assertEqual(prompt.background, BACKGROUND)
        track = extract_centroid_track(video).track
        for n in range(7):
            self.assertAlmostEqual(float(track[n + 1, 1] - track[n, 1]), 1.0, places=12)
            self.assertAlmostEqual(float(track[n + 1, 0] - track[n, 0]), 0.0, places=12)

    def test_values_lie_in_unit_interval(self):
        spec = make_motion_spec('bounce', 8, 1)
        video, _ = generate_clip(spec, ('ring', 'vivid'), ('checker', 'grey'), 8, 1, pixel_noise=0.2)
        self.assertGreaterEqual(float(video.min()), 0.0)
        self.assertLessEqual(float(video.max()), 1.0)

    def test_background_stays_below_threshold(self):
        for texture in ('flat', 'stripes', 'checker', 'dots'):
            for level in ('black', 'dark', 'dusk', 'grey'):
                spec = make_motion_spec('orbit', 8, 0)
                video, _ = generate_clip(spec, ('triangle', 'dim'), (texture, level), 8, 0)
                self.assertLess(float(video[video < 0.55].max()), 0.5)

    def test_is_deterministic(self):
        spec = make_motion_spec('diagonal', 8, 5)
        first, _ = generate_clip(spec, APPEARANCE, BACKGROUND, 8, 5, pixel_noise=0.05)
        second, _ = generate_clip(make_motion_spec('diagonal', 8, 5), APPEARANCE, BACKGROUND, 8, 5, pixel_noise=0.05)
        self.assertEqual(first.numpy().tobytes(), second.numpy().tobytes())

    def test_appearance_does_not_change_the_trajectory(self):
        spec = make_motion_spec('walk', 8, 2)
        first, _ = generate_clip(spec, ('square', 'dim'), BACKGROUND, 8, 2)
        second, _ = generate_clip(make_motion_spec('walk', 8, 2), ('diamond', 'vivid'), ('dots', 'black'), 8, 2)
        self.assertTrue(torch.allclose(extract_centroid_track(first).track,
                                       extract_centroid_track(second).track, atol=1e-12, rtol=0))

    def test_fractional_times_and_scale(self):
        spec = MotionSpec('translate-down', (3, 8), (1, 0))
        frames = render_frames(spec, APPEARANCE, BACKGROUND, [0, 0.25, 0.5, 1], scale=2)
        self.assertEqual(frames.shape, (4, 1024))
        base = render_frames(spec, APPEARANCE, BACKGROUND, [0, 1])
        pooled = torch.nn.functional.avg_pool2d(frames[[0, 3]].reshape(2, 1, 32, 32), 2).reshape(2, 256)
        self.assertLess(float((pooled - base).abs().mean()), 0.05)


class ReverseClipTests(SimpleTestCase):

    def setUp(self):
        self.video, _ = generate_clip(make_motion_spec('translate-left', 8, 0), APPEARANCE, BACKGROUND, 8, 0)

    def test_reverse_twice_is_identity(self):
        self.assertTrue(torch.equal(reverse_clip(reverse_clip(self.video)), self.video))

    def test_motion_vectors_negate(self):
        forward = motion_vectors(self.video).deltas
        backward = motion_vectors(reverse_clip(self.video)).deltas
        self.assertTrue(torch.equal(backward, -forward.flip(0)))

    def test_centroid_velocity_negates(self):
        forward = extract_centroid_track(self.video).velocity
        backward = extract_centroid_track(reverse_clip(self.video)).velocity
        self.assertTrue(torch.allclose(backward, -forward.flip(0), atol=1e-12, rtol=0))
        self.assertEqual(classify_track(extract_centroid_track(reverse_clip(self.video))), 'translate-right')


class CentroidTrackTests(SimpleTestCase):

    def test_single_bright_pixel(self):
        frames = torch.zeros(2, 256)
        frames[0, 5 * 16 + 9] = 1.0
        frames[1, 12 * 16 + 2] = 0.7
        track = extract_centroid_track(frames).track
        expected = torch.tensor([[5.0, 9.0], [12.0, 2.0]], dtype=torch.float64)
        self.assertTrue(torch.allclose(track, expected, atol=1e-12, rtol=0))

    def test_empty_frame_is_carried_over_and_flagged(self):
        frames = torch.zeros(3, 16)
        frames[0, 5] = 1.0
        frames[2, 10] = 1.0
        with self.assertLogs('corpus.generator', level='WARNING'):
            result = extract_centroid_track(frames)
        self.assertEqual(result.empty_frames, (1,))
        self.assertEqual(result.track[1].tolist(), result.track[0].tolist())

    def test_noisy_rendering_stays_near_ground_truth(self):
        spec = make_motion_spec('diagonal', 8, 4)
        video, _ = generate_clip(spec, APPEARANCE, ('flat', 'dark'), 8, 4, pixel_noise=0.03)
        track = extract_centroid_track(video).track
        truth = spec.trajectory(range(8))
        self.assertLess(float((track - truth).abs().max()), 0.5)

    def test_classify_hand_made_tracks(self):
        line = torch.tensor([[4.0, 2.0 + n] for n in range(8)])
        self.assertEqual(classify_track(line), 'translate-right')
        self.assertEqual(classify_track(line.flip(0)), 'translate-left')
        self.assertEqual(classify_track(line[:, [1, 0]]), 'translate-down')
        walk = torch.tensor([[6.0 - n % 2, 2.0 + n] for n in range(8)])
        self.assertEqual(classify_track(walk), 'walk')


class CorpusTests(SimpleTestCase):

    def test_track_recovers_the_motion_class(self):
        for record in build_corpus(64, seed=0):
            self.assertEqual(classify_track(extract_centroid_track(record.video)), record.prompt.motion, record.clip_id)

    def test_heldout_pairs_never_appear_in_training(self):
        self.assertEqual(len({heldout_shape(m) for m in MOTIONS}), len(SHAPES))
        for record in build_corpus(128, seed=1):
            self.assertFalse(is_heldout(record.prompt.motion, record.prompt.attribute('shape')))
        for record in build_corpus(8, seed=1, split='heldout'):
            self.assertTrue(is_heldout(record.prompt.motion, record.prompt.attribute('shape')))

    def test_build_is_deterministic(self):
        first = build_corpus(4, seed=9)
        second = build_corpus(4, seed=9)
        for a, b in zip(first, second):
            self.assertEqual(a.clip_id, b.clip_id)
            self.assertTrue(torch.equal(a.video, b.video))
            self.assertEqual(a.prompt, b.prompt)
        self.assertEqual(len(training_pairs(first)), 4)

    def test_empty_corpus(self):
        with self.assertRaises(EmptyCorpusError):
            build_corpus(0, seed=0)


class StorageTests(SimpleTestCase):

    def test_corpus_round_trip(self):
        records = build_corpus(3, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            write_corpus(tmp, records)
            loaded = read_corpus(tmp)
            self.assertEqual([r.clip_id for r in loaded], [r.clip_id for r in records])
            for a, b in zip(loaded, records):
                self.assertTrue(torch.equal(a.video, b.video))
                self.assertEqual(a.prompt, b.prompt)
                self.assertEqual(a.motion, b.motion)
            self.assertEqual(find_clip(tmp, records[1].clip_id).seed, records[1].seed)
            with self.assertRaises(CheckpointError):
                find_clip(tmp, 'missing')
            with self.assertRaises(EmptyCorpusError):
                read_corpus(tmp, split='heldout')

    def test_header_fields(self):
        with tempfile.TemporaryDirectory() as tmp:
            save_video(f'{tmp}/latent', torch.randn(8, 256, dtype=torch.float64), seed=4, role='latent')
            video, header = load_video(f'{tmp}/latent.bin')
        self.assertEqual(video.dtype, torch.float32)
        self.assertEqual((header['N'], header['d'], header['height'], header['width']), (8, 256, 16, 16))
        self.assertEqual(header['role'], 'latent')
        self.assertIn('generator_version', header)
