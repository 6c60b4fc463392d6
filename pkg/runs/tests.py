import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest import skipUnless

import torch
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings, tag

from cascade.pipeline import PipelineConfig
from cascade.upscaler import UpscalerConfig, init_upscaler
from corpus.generator import ClipRecord, build_corpus, generate_clip, heldout_shape, make_motion_spec, training_pairs
from corpus.storage import CLIP_DIR, load_video, read_index, save_clip
from denoiser.checkpoints import read_manifest, save_checkpoint
from denoiser.network import DenoiserConfig, init_denoiser
from diffusion.training import TrainingConfig, train_base
from metrics.classifier import ClassifierConfig, ClassifierTrainingConfig, init_classifier, train_classifier
from motion.adaptation import AdaptConfig
from schedule.kernels import make_linear_schedule
from vmc_desk.errors import ClassifierMissingError, InvalidRangeError

from .ablation import (
    ARMS_BY_NAME, DEFAULT_MOTIONS, ablation_cases, arm_checks, make_case, run_ablation, run_backward, select_arms,
)
from .models import Artifact, Run, file_sha256
from .recorder import CONFIG_FILE, RunRecorder

SMALL = DenoiserConfig(frame_size=8, patch_size=4, hidden_dim=16, n_blocks=1, time_embed_dim=8)
THRESHOLDS = {'motion_threshold': 0.8, 'alignment_threshold': 0.7, 'adaptation_margin': 0.15}


class TemporaryDirectoryMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class RunModelTests(TemporaryDirectoryMixin, TestCase):

    def test_run_id_is_generated(self):
        run = Run.objects.create(command='gen_corpus', seed=1)
        self.assertEqual(len(run.run_id), 32)
        self.assertEqual(str(run), f'gen_corpus {run.run_id[:8]}')

    def test_manifest_follows_artifacts(self):
        run = Run.objects.create(command='train_base', seed=3, run_dir=str(self.tmp), options={'steps': 5})
        output = self.tmp / 'losses.csv'
        output.write_text('step,loss\n')
        artifact = Artifact.objects.create(run=run, role=Artifact.PRODUCED, kind='csv', name='losses', path=str(output))
        manifest = json.loads((self.tmp / 'manifest.json').read_text())
        self.assertEqual(manifest['run_id'], run.run_id)
        self.assertEqual(manifest['options'], {'steps': 5})
        self.assertEqual(manifest['produced'][0]['sha256'], file_sha256(output))

        artifact.delete()
        manifest = json.loads((self.tmp / 'manifest.json').read_text())
        self.assertEqual(manifest['produced'], [])

    def test_directory_hash_covers_names_and_contents(self):
        (self.tmp / 'a').write_text('1')
        first = file_sha256(self.tmp)
        (self.tmp / 'a').write_text('2')
        self.assertNotEqual(file_sha256(self.tmp), first)


class RunRecorderTests(TemporaryDirectoryMixin, TestCase):

    def test_successful_run(self):
        with RunRecorder('gen_corpus', {'count': 2}, {'corpus': {}}, seed=4, runs_root=self.tmp) as recorder:
            with recorder.timed('render'):
                recorder.path('out.txt').write_text('x')
            recorder.produced(recorder.path('out.txt'), 'json', name='out')
        run = Run.objects.get()
        self.assertEqual(run.status, Run.SUCCEEDED)
        self.assertIsNotNone(run.finished)
        self.assertIn('render', run.timings)
        self.assertTrue(recorder.directory.name.startswith('gen_corpus-'))
        self.assertEqual(json.loads((recorder.directory / CONFIG_FILE).read_text()), {'corpus': {}})
        manifest = json.loads((recorder.directory / 'manifest.json').read_text())
        self.assertEqual(manifest['status'], Run.SUCCEEDED)
        self.assertEqual([p['name'] for p in manifest['produced']], ['out'])

    def test_failed_run_is_recorded(self):
        with self.assertRaises(ValueError):
            with RunRecorder('distill', {}, {}, seed=0, run_dir=self.tmp / 'run'):
                raise ValueError('boom')
        run = Run.objects.get()
        self.assertEqual(run.status, Run.FAILED)
        self.assertEqual(run.error, 'ValueError: boom')


class AblationTests(TestCase):

    def test_cases_use_heldout_pairs_and_change_every_attribute(self):
        case = make_case('walk', seed=1)
        self.assertEqual(case.source_prompt.attribute('shape'), heldout_shape('walk'))
        self.assertEqual(case.target_prompt.motion, 'walk')
        for group in ('shape', 'intensity', 'texture', 'level'):
            self.assertNotEqual(case.source_prompt.attribute(group), case.target_prompt.attribute(group))
        self.assertEqual(len(ablation_cases(('walk', 'orbit'), (0, 1, 2))), 6)

    def test_select_arms(self):
        self.assertEqual(select_arms(['frozen'])[0].adapted, False)
        with self.assertRaises(InvalidRangeError):
            select_arms(['everything'])

    def test_checks(self):
        summary = {
            'cos-temporal': {'motion_preservation': 0.9, 'prompt_alignment': 0.8},
            'l2-temporal': {'motion_preservation': 0.85, 'prompt_alignment': 0.6},
            'frozen': {'motion_preservation': 0.5, 'prompt_alignment': 0.9},
        }
        checks = arm_checks(summary, THRESHOLDS)
        self.assertTrue(checks['customization'])
        self.assertAlmostEqual(checks['adaptation_margin'], 0.4)
        self.assertTrue(checks['adaptation'])
        self.assertFalse(checks['both_losses'])
        self.assertAlmostEqual(checks['loss_margin'], 0.05)

    def test_small_run(self):
        s = make_linear_schedule(100, 1e-4, 0.02)
        classifier = init_classifier(ClassifierConfig(hidden_dim=8, channels=2, frame_size=8), 0)
        cases = ablation_cases(('bounce',), (0,), frame_size=8)
        base = init_denoiser(SMALL, 0)
        arms = (ARMS_BY_NAME['cos-temporal'], ARMS_BY_NAME['frozen'])
        adapt_cfg, pipeline_cfg = AdaptConfig(steps=2), PipelineConfig(inversion_steps=3)
        with self.assertRaises(ClassifierMissingError):
            run_ablation(base, cases, None, adapt_cfg, pipeline_cfg, s, THRESHOLDS, arms=arms)

        classifier.heldout_accuracy.fill_(1.0)
        result = run_ablation(base, cases, classifier, adapt_cfg, pipeline_cfg, s, THRESHOLDS, arms=arms)
        self.assertEqual(len(result.rows), 6)
        self.assertEqual(set(result.summary), {'cos-temporal', 'frozen'})
        self.assertIn('adaptation_margin', result.checks)


@tag('slow')
@skipUnless(settings.VMC_SLOW_TESTS, 'slow ablation on trained models')
class TrainedAblationTests(SimpleTestCase):
    """
    The customization, adaptation, loss and backward-motion comparisons on
    a trained base model, four motion classes and three seeds per class.
    """

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.s = make_linear_schedule(100, 1e-4, 0.02)
        training = TrainingConfig.from_dict(settings.VMC['base_training'], steps=3000, learning_rate=1e-3)
        cls.base = train_base(training_pairs(build_corpus(512, seed=0)), training, seed=0, schedule=cls.s).params
        cls.classifier = train_classifier(ClassifierTrainingConfig.from_dict(settings.VMC['classifier']), seed=0).params
        cls.adapt_cfg = AdaptConfig.from_dict(settings.VMC['adaptation'], learning_rate=1e-3)
        cls.pipeline_cfg = PipelineConfig.from_dict(settings.VMC['pipeline'])
        cls.thresholds = settings.VMC['metrics']

    def test_arms(self):
        cases = ablation_cases(DEFAULT_MOTIONS, (0, 1, 2))
        result = run_ablation(self.base, cases, self.classifier, self.adapt_cfg, self.pipeline_cfg, self.s,
                              self.thresholds, min_accuracy=settings.VMC['classifier']['min_accuracy'])
        self.assertEqual(len(result.rows), len(ARMS_BY_NAME) * len(cases) * 3)
        cos = result.summary['cos-temporal']
        self.assertGreaterEqual(cos['motion_preservation'], 0.8)
        self.assertGreaterEqual(cos['prompt_alignment'], 0.7)
        self.assertTrue(result.checks['customization'])
        self.assertGreaterEqual(result.checks['adaptation_margin'], 0.15)
        self.assertTrue(result.checks['adaptation'])
        self.assertTrue(result.checks['both_losses'])

    def test_backward_motion(self):
        cases = ablation_cases(('translate-right',), (0, 1, 2))
        result = run_backward(self.base, cases, self.adapt_cfg, self.pipeline_cfg, self.s, self.thresholds)
        means = result.summary['backward']
        self.assertGreaterEqual(means['motion_vs_reversed'], 0.8)
        self.assertLessEqual(means['motion_vs_forward'], -0.5)
        self.assertTrue(result.checks['follows_reversed'])
        self.assertTrue(result.checks['opposes_forward'])


@override_settings(VMC_RUNS_ROOT=Path(tempfile.gettempdir()) / 'vmc-test-runs')
class CommandTests(TemporaryDirectoryMixin, TestCase):

    def setUp(self):
        super().setUp()
        self.denoiser = self.tmp / 'denoiser'
        save_checkpoint(init_denoiser(SMALL, 0), self.denoiser, 'denoiser')

    def call(self, name, **options):
        return call_command(name, stdout=StringIO(), **options)

    def small_cascade(self):
        interpolator, upscaler, classifier = self.tmp / 'interp', self.tmp / 'sr', self.tmp / 'classifier'
        save_checkpoint(init_denoiser(SMALL, 1), interpolator, 'interpolator')
        save_checkpoint(init_upscaler(UpscalerConfig(channels=2, frame_size=8), 2), upscaler, 'upscaler')
        scorer = init_classifier(ClassifierConfig(hidden_dim=8, channels=2, frame_size=8), 3)
        scorer.heldout_accuracy.fill_(1.0)
        save_checkpoint(scorer, classifier, 'classifier')
        spec = make_motion_spec('bounce', 8, 0, frame_size=8)
        video, prompt = generate_clip(spec, ('square', 'bright'), ('flat', 'dark'), 8, 0, frame_size=8)
        clip = save_clip(self.tmp / 'clips', ClipRecord('source', video, prompt, spec, 0)).with_suffix('')
        return interpolator, upscaler, classifier, clip

    def test_gen_corpus(self):
        self.call('gen_corpus', seed=0, count=3, frame_count=4, run_dir=str(self.tmp / 'corpus-run'))
        self.assertEqual(len(read_index(self.tmp / 'corpus-run' / 'corpus')), 3)
        run = Run.objects.get(command='gen_corpus')
        self.assertEqual(run.status, Run.SUCCEEDED)
        self.assertEqual(run.seed, 0)
        manifest = json.loads((self.tmp / 'corpus-run' / 'manifest.json').read_text())
        self.assertEqual(manifest['produced'][0]['kind'], 'corpus')
        self.assertEqual(manifest['options']['count'], 3)

    def test_seed_is_required(self):
        with self.assertRaises(CommandError):
            self.call('gen_corpus', count=3)

    def test_invalid_config_exits_with_2(self):
        config = self.tmp / 'bad.json'
        config.write_text(json.dumps({'sampler': {'temperature': 1.0}}))
        with self.assertRaises(CommandError) as cm:
            self.call('gen_corpus', seed=0, config=str(config))
        self.assertEqual(cm.exception.returncode, 2)

    def test_missing_checkpoint_exits_with_3(self):
        with self.assertRaises(CommandError) as cm:
            self.call('distill', seed=0, checkpoint=str(self.tmp / 'nowhere'), clip='x')
        self.assertEqual(cm.exception.returncode, 3)

    def test_distill(self):
        self.call('gen_corpus', seed=0, count=2, frame_count=4, frame_size=8, run_dir=str(self.tmp / 'c'))
        corpus = self.tmp / 'c' / 'corpus'
        clip_id = read_index(corpus)[0]['clip_id']
        self.call('distill', seed=0, checkpoint=str(self.denoiser), corpus=str(corpus), clip=clip_id,
                  steps=2, loss='l2', run_dir=str(self.tmp / 'd'))
        self.assertTrue((self.tmp / 'd' / 'adapted' / 'manifest.json').is_file())
        self.assertEqual(len((self.tmp / 'd' / 'losses.csv').read_text().splitlines()), 3)
        diagnostics = json.loads((self.tmp / 'd' / 'diagnostics.json').read_text())
        self.assertEqual(diagnostics['labels'], ['temporal_attention'])
        self.assertEqual(diagnostics['adaptation']['loss'], 'l2')
        manifest = json.loads((self.tmp / 'd' / 'manifest.json').read_text())
        self.assertEqual({a['kind'] for a in manifest['consumed']}, {'checkpoint', 'clip'})

        adapted = read_manifest(self.tmp / 'd' / 'adapted')['provenance']
        self.assertEqual(adapted['clip'], clip_id)
        self.assertEqual(adapted['clip_sha256'], file_sha256(corpus / CLIP_DIR / f'{clip_id}.bin'))
        self.assertEqual(adapted['prompt']['appearance'], [])
        self.assertEqual(adapted['prompt']['background'], [])
        self.assertEqual((adapted['loss'], adapted['steps']), ('l2', 2))
        self.assertEqual(adapted['seed'], 0)

    def test_invert(self):
        _, _, _, clip = self.small_cascade()
        self.call('invert', checkpoint=str(self.denoiser), clip=str(clip), steps=4, run_dir=str(self.tmp / 'i'))
        latent, header = load_video(self.tmp / 'i' / 'latent')
        self.assertEqual(latent.shape, (8, 64))
        self.assertEqual(header['timestep'], 100)
        self.assertEqual(header['prompt']['appearance'], [])

    def test_generate_eval_report_and_replay(self):
        interpolator, upscaler, classifier, clip = self.small_cascade()
        generate_dir = self.tmp / 'g'
        self.call('generate', seed=5, checkpoint=str(self.denoiser), interpolator=str(interpolator),
                  upscaler=str(upscaler), clip=str(clip), inversion_steps=3, interp_steps=2,
                  target_prompt='{"motion": "bounce", "appearance": ["circle", "dim"]}', run_dir=str(generate_dir))
        final, header = load_video(generate_dir / 'final')
        self.assertEqual((header['N'], header['d']), (29, 256))
        self.assertTrue(torch.isfinite(final).all())
        result = json.loads((generate_dir / 'result.json').read_text())
        self.assertEqual(set(result['frozen_hashes']), {'interpolator', 'upscaler'})
        self.assertTrue((generate_dir / 'frames.pgm').is_file())

        with self.assertRaises(CommandError) as cm:
            self.call('eval', generated=[str(generate_dir)], run_dir=str(self.tmp / 'e0'))
        self.assertEqual(cm.exception.returncode, 4)

        self.call('eval', generated=[str(generate_dir)], classifier=str(classifier), run_dir=str(self.tmp / 'e'))
        lines = (self.tmp / 'e' / 'metrics.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'clip_id,metric,value')
        self.assertEqual(len(lines), 4)
        self.assertIn('factor-classifier-alignment', (self.tmp / 'e' / 'report.md').read_text())

        self.call('report', runs=[str(generate_dir), str(self.tmp / 'e')], run_dir=str(self.tmp / 'r'))
        self.assertTrue((self.tmp / 'r' / 'g.pgm').is_file())
        self.assertIn('eval e', (self.tmp / 'r' / 'report.md').read_text())

        self.call('replay', str(generate_dir / 'manifest.json'), run_dir=str(self.tmp / 'g2'), verify=True)
        replayed, _ = load_video(self.tmp / 'g2' / 'final')
        self.assertTrue(torch.equal(replayed, final))
        self.assertEqual(Run.objects.filter(command='generate').count(), 2)

