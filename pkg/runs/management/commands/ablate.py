import json
import math

from cascade.pipeline import PipelineConfig
from metrics.reports import markdown_table, write_metric_rows
from motion.adaptation import AdaptConfig
from schedule.kernels import schedule_from_config

from ...ablation import (
    ARMS_BY_NAME, DEFAULT_MOTIONS, STUDIES, ablation_cases, run_ablation, run_backward, select_arms,
)
from ..base import VMCCommand, overrides


class Command(VMCCommand):
    help = 'Run the loss, attention-layer and adaptation ablations on held-out clips'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Base denoiser checkpoint directory')
        parser.add_argument('--classifier', help='Factor classifier checkpoint directory')
        parser.add_argument('--study', choices=STUDIES, default='arms')
        parser.add_argument('--motions', nargs='+', default=list(DEFAULT_MOTIONS))
        parser.add_argument('--seeds', nargs='+', type=int, default=[0, 1, 2], help='Case seeds')
        parser.add_argument('--arms', nargs='+', default=list(ARMS_BY_NAME))
        parser.add_argument('--steps', type=int, help='Adaptation steps per arm and case')
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--inversion-steps', type=int)

    def execute_run(self, recorder, config, **options):
        base = self.load_stage(recorder, options['checkpoint'], 'denoiser')
        s = schedule_from_config(config['schedule'])
        adapt_cfg = AdaptConfig.from_dict(config['adaptation'], **overrides(options, 'steps', 'learning_rate'))
        pipeline_cfg = PipelineConfig.from_dict(config['pipeline'], seed=options['seed'],
                                                **overrides(options, 'inversion_steps'))
        cases = ablation_cases(options['motions'], options['seeds'], frame_count=config['corpus']['frame_count'],
                               frame_size=base.config.frame_size)

        with recorder.timed(options['study']):
            if options['study'] == 'backward':
                result = run_backward(base, cases, adapt_cfg, pipeline_cfg, s, config['metrics'])
            else:
                classifier = (self.load_stage(recorder, options['classifier'], 'classifier')
                              if options['classifier'] else None)
                result = run_ablation(base, cases, classifier, adapt_cfg, pipeline_cfg, s, config['metrics'],
                                      arms=select_arms(options['arms']),
                                      min_accuracy=config['classifier']['min_accuracy'])

        rows = [(f'{arm}/{case_id}', metric, value) for arm, case_id, metric, value in result.rows]
        recorder.produced(write_metric_rows(recorder.path('metrics.csv'), rows), 'csv', name='metrics')
        report = recorder.path('report.md')
        report.write_text(self.render_report(result))
        recorder.produced(report, 'markdown', name='report')
        checks = recorder.path('checks.json')
        checks.write_text(json.dumps({'summary': result.summary, 'checks': result.checks}, indent=2, sort_keys=True))
        recorder.produced(checks, 'json', name='checks')
        for name, value in result.checks.items():
            self.stdout.write(f'{name}: {value}')

    def render_report(self, result):
        lines = [markdown_table(result.summary)]
        for arm, metrics in result.summary.items():
            extra = {m: v for m, v in metrics.items() if m.startswith('motion_vs_')}
            for metric, value in extra.items():
                lines.append(f'- {arm} {metric}: {"nan" if math.isnan(value) else f"{value:.4f}"}')
        lines.append('')
        lines.extend(f'- {name}: {value}' for name, value in result.checks.items())
        return '\n'.join(lines) + '\n'
