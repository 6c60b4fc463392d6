import math
import tempfile
from pathlib import Path
from unittest import skipUnless

import torch
from django.conf import settings
from django.test import SimpleTestCase, tag
from PIL import Image

from conditioning.prompts import StructuredPrompt, appearance_invariant
from corpus.generator import MotionSpec, build_corpus, generate_clip, make_motion_spec, render_frames
from denoiser.checkpoints import load_checkpoint, save_checkpoint
from vmc_desk.errors import ClassifierMissingError, MetricPrerequisiteError, ShapeMismatchError

from .classifier import (
    ClassifierConfig, ClassifierTrainingConfig, FactorClassifier, evaluate_classifier,
    init_classifier, soft_centroids, train_classifier,
)
from .reports import frame_grid, markdown_table, read_metric_rows, save_frame_grid, summarise, write_metric_rows
from .scores import (
    METRIC_LABELS, frame_consistency, motion_preservation, prepare_for_classifier,
    prompt_alignment, track_correlation,
)

RIGHT = MotionSpec('translate-right', (7, 2), (0, 1))
LEFT = MotionSpec('translate-left', (7, 9), (0, -1))
STILL = MotionSpec('translate-right', (7, 7), (0, 0))


def clip(spec, appearance=('square', 'bright'), background=('flat', 'dark')):
    return generate_clip(spec, appearance, background, 8, 0)[0]


class MotionPreservationTests(SimpleTestCase):

    def test_same_clip_scores_one(self):
        self.assertAlmostEqual(motion_preservation(clip(RIGHT), clip(RIGHT)), 1.0, places=9)

    def test_opposite_direction_scores_minus_one(self):
        self.assertAlmostEqual(motion_preservation(clip(RIGHT), clip(LEFT)), -1.0, places=9)

    def test_appearance_does_not_matter(self):
        for motion_class in ('translate-down', 'diagonal', 'bounce'):
            spec = make_motion_spec(motion_class, 8, seed=5)
            first = clip(spec, ('square', 'bright'), ('flat', 'dark'))
            second = clip(spec, ('triangle', 'dim'), ('stripes', 'grey'))
            self.assertGreaterEqual(motion_preservation(first, second), 0.99, motion_class)

    def test_longer_and_larger_output_is_aligned(self):
        source = clip(RIGHT)
        cascade_like = render_frames(RIGHT, ('circle', 'vivid'), ('checker', 'black'),
                                     [k / 4 for k in range(29)], scale=2)
        self.assertEqual(cascade_like.shape, (29, 1024))
        self.assertAlmostEqual(motion_preservation(source, cascade_like), 1.0, places=6)

    def test_unalignable_length(self):
        with self.assertRaises(ShapeMismatchError):
            motion_preservation(clip(RIGHT), torch.zeros(10, 256))

    def test_static_tracks_are_undefined(self):
        with self.assertLogs('metrics.scores', 'WARNING'):
            score = motion_preservation(clip(STILL), clip(STILL))
        self.assertTrue(math.isnan(score))

    def test_static_output_scores_zero(self):
        self.assertEqual(motion_preservation(clip(RIGHT), clip(STILL)), 0.0)

    def test_blank_output_is_undefined(self):
        with self.assertLogs('metrics.scores', 'WARNING') as logs:
            score = motion_preservation(clip(RIGHT), torch.full((8, 256), 0.2))
        self.assertTrue(math.isnan(score))
        self.assertIn('no foreground in the generated track', logs.output[0])

        blank = torch.full((8, 2), float('nan'), dtype=torch.float64)
        score, diagnostics = track_correlation(blank, blank)
        self.assertTrue(math.isnan(score))
        self.assertEqual(diagnostics['degenerate'], 'no foreground in the source and generated track')

    def test_foreground_threshold_is_passed_through(self):
        dimmed = 0.5 * clip(RIGHT)
        with self.assertLogs('metrics.scores', 'WARNING'):
            self.assertTrue(math.isnan(motion_preservation(clip(RIGHT), dimmed)))
        self.assertAlmostEqual(motion_preservation(clip(RIGHT), dimmed, threshold=0.3), 1.0, places=9)

    def test_independent_random_walks_at_clip_length(self):
        # 7 displacements per axis: a single score has a spread near 0.27
        gen = torch.Generator().manual_seed(0)
        scores = []
        for _ in range(200):
            a = torch.randn(8, 2, generator=gen, dtype=torch.float64).cumsum(0)
            b = torch.randn(8, 2, generator=gen, dtype=torch.float64).cumsum(0)
            scores.append(track_correlation(a, b)[0])
        self.assertLess(abs(sum(scores) / len(scores)), 0.1)
        self.assertGreater(sum(abs(s) < 0.7 for s in scores), 190)

    def test_independent_long_random_walks_score_near_zero(self):
        # the spread shrinks with track length; 255 displacements keep it near 0.045
        gen = torch.Generator().manual_seed(0)
        small = 0
        for _ in range(100):
            a = torch.randn(256, 2, generator=gen, dtype=torch.float64).cumsum(0)
            b = torch.randn(256, 2, generator=gen, dtype=torch.float64).cumsum(0)
            score, _ = track_correlation(a, b)
            small += abs(score) < 0.3
        self.assertGreater(small, 95)

    def test_diagnostics_list_moving_axes(self):
        track = torch.tensor([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        score, diagnostics = track_correlation(track, track)
        self.assertEqual(score, 1.0)
        self.assertEqual(set(diagnostics['axes']), {'col'})


class FrameConsistencyTests(SimpleTestCase):

    def setUp(self):
        self.video = clip(RIGHT)

    def test_identical_frames(self):
        self.assertAlmostEqual(frame_consistency(self.video[:1].repeat(5, 1)), 1.0, places=9)

    def test_range_and_scale_invariance(self):
        score = frame_consistency(self.video)
        self.assertTrue(0.0 <= score <= 1.0)
        self.assertAlmostEqual(frame_consistency(0.5 * self.video), score, places=9)

    def test_inverted_frame_scores_zero(self):
        frame = self.video[0]
        self.assertAlmostEqual(frame_consistency(torch.stack([frame, 1.0 - frame])), 0.0, places=9)

    def test_constant_frames_are_skipped(self):
        frame = self.video[0]
        with self.assertLogs('metrics.scores', 'WARNING'):
            score = frame_consistency(torch.stack([frame, torch.full_like(frame, 0.3), frame]))
        self.assertAlmostEqual(score, 1.0, places=9)
        with self.assertLogs('metrics.scores', 'WARNING'):
            self.assertTrue(math.isnan(frame_consistency(torch.full((3, 256), 0.2))))

    def test_needs_two_frames(self):
        with self.assertRaises(ShapeMismatchError):
            frame_consistency(self.video[:1])


class ClassifierTests(SimpleTestCase):

    def setUp(self):
        self.classifier = init_classifier(ClassifierConfig(hidden_dim=16, channels=4), 0)
        self.records = build_corpus(4, seed=0, split='all')

    def test_heads(self):
        logits = self.classifier(torch.stack([r.video for r in self.records]))
        self.assertEqual(logits['motion'].shape, (4, 8))
        self.assertEqual(logits['shape'].shape, (4, 8))
        self.assertEqual(logits['intensity'].shape, (4, 4))
        probabilities = self.classifier.predict_proba(self.records[0].video)
        self.assertAlmostEqual(float(probabilities['shape'].sum()), 1.0, places=5)

    def test_wrong_clip_shape(self):
        with self.assertRaises(ShapeMismatchError):
            self.classifier(torch.rand(7, 256))

    def test_soft_centroid_of_single_pixel(self):
        grid = torch.zeros(1, 1, 16, 16)
        grid[0, 0, 3, 11] = 0.5
        self.assertEqual(soft_centroids(grid)[0, 0].tolist(), [3.0, 11.0])

    def test_checkpoint_keeps_heldout_accuracy(self):
        self.classifier.heldout_accuracy.fill_(0.97)
        with tempfile.TemporaryDirectory() as tmp:
            save_checkpoint(self.classifier, tmp, 'classifier')
            loaded, manifest = load_checkpoint(tmp, expected_kind='classifier')
        self.assertIsInstance(loaded, FactorClassifier)
        self.assertAlmostEqual(float(loaded.heldout_accuracy), 0.97, places=6)
        self.assertEqual(manifest['config']['channels'], 4)

    def test_short_training_run(self):
        cfg = ClassifierTrainingConfig(steps=3, batch_size=4, train_clips=8, heldout_clips=4)
        result = train_classifier(cfg, seed=0, classifier_config=ClassifierConfig(hidden_dim=16, channels=4))
        self.assertEqual(len(result.losses), 3)
        self.assertEqual(set(result.accuracy), {'motion', 'shape', 'intensity', 'mean'})
        self.assertEqual(float(result.params.heldout_accuracy),
                         min(result.accuracy[h] for h in ('motion', 'shape', 'intensity')))


class PromptAlignmentTests(SimpleTestCase):

    def setUp(self):
        self.classifier = init_classifier(ClassifierConfig(hidden_dim=16, channels=4), 0)
        self.record = build_corpus(1, seed=3, split='all')[0]

    def test_missing_classifier(self):
        with self.assertRaises(ClassifierMissingError):
            prompt_alignment(self.record.video, self.record.prompt, None)

    def test_untrained_classifier_is_refused(self):
        with self.assertRaises(MetricPrerequisiteError):
            prompt_alignment(self.record.video, self.record.prompt, self.classifier)

    def test_invariant_prompt_scores_motion_only(self):
        self.classifier.heldout_accuracy.fill_(1.0)
        motion_only = appearance_invariant(self.record.prompt)
        expected = self.classifier.predict_proba(self.record.video)['motion'][
            FactorClassifier.class_index('motion', motion_only.motion)]
        self.assertAlmostEqual(prompt_alignment(self.record.video, motion_only, self.classifier),
                               float(expected), places=6)
        score = prompt_alignment(self.record.video, self.record.prompt, self.classifier)
        self.assertTrue(0.0 <= score <= 1.0)

    def test_cascade_output_is_brought_to_classifier_grid(self):
        self.assertEqual(prepare_for_classifier(torch.rand(29, 1024), 8, 16).shape, (8, 256))
        with self.assertRaises(ShapeMismatchError):
            prepare_for_classifier(torch.rand(10, 256), 8, 16)


class ReportTests(SimpleTestCase):

    def test_metric_rows_use_substitution_labels(self):
        rows = [('a', 'motion_preservation', 0.9), ('b', 'motion_preservation', float('nan')),
                ('a', 'frame_consistency', 0.8)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metric_rows(Path(tmp) / 'metrics.csv', rows)
            header = path.read_text().splitlines()[0]
            loaded = read_metric_rows(path)
        self.assertEqual(header, 'clip_id,metric,value')
        self.assertEqual(loaded[0], ('a', 'trajectory-correlation', 0.9))
        self.assertTrue(math.isnan(loaded[1][2]))
        self.assertEqual(summarise(loaded)['trajectory-correlation'], 0.9)

    def test_markdown_table(self):
        table = markdown_table({'adapted': {'motion_preservation': 0.91}, 'frozen': {}})
        lines = table.splitlines()
        self.assertEqual(lines[0], '| Method | ' + ' | '.join(
            METRIC_LABELS[m] for m in ('prompt_alignment', 'frame_consistency', 'motion_preservation')) + ' |')
        self.assertEqual(lines[2], '| adapted | - | - | 0.910000 |')
        self.assertEqual(lines[3], '| frozen | - | - | - |')

    def test_frame_grid(self):
        small, large = clip(RIGHT), torch.rand(3, 1024)
        grid = frame_grid([small, large])
        self.assertEqual(grid.shape, (32 * 2 + 1, 32 * 8 + 7))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_frame_grid(Path(tmp) / 'grid.pgm', [small, large])
            self.assertTrue(path.read_bytes().startswith(b'P5'))
            with Image.open(path) as image:
                self.assertEqual(image.mode, 'L')
                self.assertEqual(image.size, (32 * 8 + 7, 65))


@tag('slow')
@skipUnless(settings.VMC_SLOW_TESTS, 'slow classifier training')
class TrainedClassifierTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.result = train_classifier(ClassifierTrainingConfig(), seed=0)

    def test_heldout_accuracy(self):
        self.assertGreaterEqual(float(self.result.params.heldout_accuracy), 0.95)

    def test_corpus_clips_align_with_their_prompts(self):
        records = build_corpus(16, seed=11, split='all')
        self.assertGreaterEqual(evaluate_classifier(self.result.params, records)['mean'], 0.9)
        scores = [prompt_alignment(r.video, r.prompt, self.result.params) for r in records]
        self.assertGreaterEqual(sum(scores) / len(scores), 0.9)

    def test_wrong_prompt_scores_low(self):
        record = build_corpus(1, seed=12, split='all')[0]
        other = 'walk' if record.prompt.motion != 'walk' else 'orbit'
        wrong = StructuredPrompt(other, record.prompt.appearance, record.prompt.background)
        self.assertLess(prompt_alignment(record.video, appearance_invariant(wrong), self.result.params), 0.5)
