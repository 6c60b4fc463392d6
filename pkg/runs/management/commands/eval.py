import json
from pathlib import Path

import torch

from conditioning.prompts import StructuredPrompt, appearance_invariant, encode_prompt
from corpus.storage import load_video
from denoiser.gradients import finite_difference_check, sample_coordinates
from denoiser.network import ParameterLabel
from metrics.reports import markdown_table, summarise, write_metric_rows
from metrics.scores import frame_consistency, motion_preservation, prompt_alignment
from motion.adaptation import distillation_objective
from schedule.kernels import schedule_from_config
from vmc_desk.errors import ConfigError

from ..base import VMCCommand, option_or

GRADIENT_COORDINATES = 20


class Command(VMCCommand):
    help = 'Score generate runs: trajectory correlation, frame consistency and prompt alignment'
    randomized = False

    def add_command_arguments(self, parser):
        parser.add_argument('--generated', nargs='+', required=True, help='Run directories of generate')
        parser.add_argument('--classifier', help='Factor classifier checkpoint directory')
        parser.add_argument('--min-accuracy', type=float)
        parser.add_argument('--label', default='vmc', help='Row name in the report table')
        parser.add_argument('--gradient-check', help='Denoiser checkpoint whose temporal-attention '
                                                     'gradients are checked against finite differences')

    def execute_run(self, recorder, config, **options):
        classifier = self.load_stage(recorder, options['classifier'], 'classifier') if options['classifier'] else None
        min_accuracy = option_or(options, 'min_accuracy', config['classifier'])
        threshold = config['metrics']['foreground_threshold']
        rows = []
        for run_dir in map(Path, options['generated']):
            result_path = run_dir / 'result.json'
            if not result_path.is_file():
                raise ConfigError(f'{run_dir} is not a generate run (no result.json)')
            result = json.loads(result_path.read_text())
            source, _ = load_video(run_dir / 'source')
            final, _ = load_video(run_dir / 'final')
            recorder.consumed(run_dir / 'final.bin', 'video', name=f'{run_dir.name}/final')
            target = StructuredPrompt.from_dict(result['target_prompt'])
            clip_id = f'{run_dir.name}:{result["source_clip"]}'
            rows.append((clip_id, 'motion_preservation', motion_preservation(source, final, threshold)))
            rows.append((clip_id, 'frame_consistency', frame_consistency(final)))
            rows.append((clip_id, 'prompt_alignment', prompt_alignment(final, target, classifier, min_accuracy)))

        metrics = write_metric_rows(recorder.path('metrics.csv'), rows)
        recorder.produced(metrics, 'csv', name='metrics')
        report = recorder.path('report.md')
        report.write_text(markdown_table({options['label']: summarise(rows)}))
        recorder.produced(report, 'markdown', name='report')

        if options['gradient_check']:
            self.gradient_check(recorder, config, options['gradient_check'], source, result)

    def gradient_check(self, recorder, config, checkpoint, video, result):
        params = self.load_stage(recorder, checkpoint, 'denoiser').double()
        s = schedule_from_config(config['schedule'])
        video = video.double()
        eps = torch.randn(video.shape, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        c = encode_prompt(appearance_invariant(StructuredPrompt.from_dict(result['source_prompt'])))
        t = s.T // 2

        def closure(p):
            return distillation_objective(p, video, c, t, eps, s)[0]

        coordinates = sample_coordinates(params, {ParameterLabel.TEMPORAL_ATTENTION}, GRADIENT_COORDINATES, seed=0)
        check = finite_difference_check(params, closure, coordinates)
        path = recorder.path('gradient_check.json')
        path.write_text(json.dumps(check.to_dict(), indent=2))
        recorder.produced(path, 'json', name='gradient_check')
