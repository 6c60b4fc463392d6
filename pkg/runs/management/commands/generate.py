import json

from cascade.pipeline import INVERSION_CONDITIONING, CascadeBundle, PipelineConfig, vmc_pipeline
from metrics.reports import save_frame_grid
from schedule.kernels import schedule_from_config

from ..base import VMCCommand, overrides


class Command(VMCCommand):
    help = 'Customize a source clip for a target prompt through the full cascade'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Keyframe denoiser (base or adapted) checkpoint')
        parser.add_argument('--interpolator', required=True, help='Interpolator checkpoint directory')
        parser.add_argument('--upscaler', required=True, help='Upscaler checkpoint directory')
        parser.add_argument('--corpus', help='Corpus directory holding --clip')
        parser.add_argument('--clip', required=True, help='Source clip id in --corpus, or a clip container path')
        parser.add_argument('--target-prompt', required=True,
                            help='JSON prompt, e.g. {"motion": "walk", "appearance": ["circle", "dim"]}')
        parser.add_argument('--inversion-steps', type=int)
        parser.add_argument('--invert-with', choices=INVERSION_CONDITIONING)
        parser.add_argument('--interp-steps', type=int)
        parser.add_argument('--eta', type=float)
        parser.add_argument('--reverse', action='store_true', help='Use the source clip played backwards')

    def execute_run(self, recorder, config, **options):
        target = self.parse_prompt(options['target_prompt'])
        bundle = CascadeBundle(
            keyframe_params=self.load_stage(recorder, options['checkpoint'], 'denoiser'),
            interp_params=self.load_stage(recorder, options['interpolator'], 'interpolator'),
            sr_params=self.load_stage(recorder, options['upscaler'], 'upscaler'),
            schedule=schedule_from_config(config['schedule']),
        )
        record, source = self.load_source(recorder, options['corpus'], options['clip'], options['reverse'])
        cfg = PipelineConfig.from_dict(config['pipeline'], **{
            'interp_steps': config['interpolation']['sampling_steps'],
            'seed': options['seed'],
            **overrides(options, 'inversion_steps', 'invert_with', 'interp_steps', 'eta'),
        })
        result = vmc_pipeline(source, record.prompt, target, bundle, cfg)
        recorder.run.timings = result.timings
        recorder.run.save()

        self.save_output_video(recorder, 'source', source, prompt=record.prompt, clip_id=record.clip_id)
        self.save_output_video(recorder, 'latent', result.inverted_latent)
        self.save_output_video(recorder, 'keyframes', result.keyframes, prompt=target)
        self.save_output_video(recorder, 'interpolated', result.interpolated, prompt=target)
        self.save_output_video(recorder, 'final', result.final, prompt=target)
        grid = save_frame_grid(recorder.path('frames.pgm'),
                               [source, result.keyframes, result.interpolated, result.final])
        recorder.produced(grid, 'image', name='frames')

        summary = recorder.path('result.json')
        summary.write_text(json.dumps({
            'source_clip': record.clip_id,
            'source_prompt': record.prompt.to_dict(),
            'target_prompt': target.to_dict(),
            'reverse': options['reverse'],
            'pipeline': cfg.to_dict(),
            'frozen_hashes': result.frozen_hashes,
            'timings': result.timings,
        }, indent=2, sort_keys=True))
        recorder.produced(summary, 'json', name='result')
