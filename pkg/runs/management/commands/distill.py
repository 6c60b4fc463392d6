import json

from conditioning.prompts import appearance_invariant
from denoiser.checkpoints import save_checkpoint
from diffusion.training import write_loss_csv
from motion.adaptation import AdaptConfig, adapt_temporal_attention
from motion.residuals import LOSSES
from schedule.kernels import schedule_from_config

from ...models import Artifact
from ..base import VMCCommand, overrides, provenance


class Command(VMCCommand):
    help = 'Distil the motion of one clip into the temporal-attention projections'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Base denoiser checkpoint directory')
        parser.add_argument('--corpus', help='Corpus directory holding --clip')
        parser.add_argument('--clip', required=True, help='Clip id in --corpus, or a clip container path')
        parser.add_argument('--steps', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--loss', choices=LOSSES)
        parser.add_argument('--labels', nargs='+', help='Parameter labels to adapt (default: temporal_attention)')
        parser.add_argument('--stride', type=int)
        parser.add_argument('--reverse', action='store_true', help='Distil the clip played backwards')
        parser.add_argument('--source-prompt', action='store_true',
                            help='Condition on the full source prompt instead of its appearance-invariant form')

    def execute_run(self, recorder, config, **options):
        params = self.load_stage(recorder, options['checkpoint'], 'denoiser')
        record, video = self.load_source(recorder, options['corpus'], options['clip'], options['reverse'])
        cfg = AdaptConfig.from_dict(
            config['adaptation'],
            allow_non_invariant=options['source_prompt'],
            **overrides(options, 'steps', 'learning_rate', 'loss', 'labels', 'stride'),
        )
        prompt = record.prompt if options['source_prompt'] else appearance_invariant(record.prompt)
        with recorder.timed('adapt'):
            result = adapt_temporal_attention(params, video, prompt, cfg, schedule_from_config(config['schedule']),
                                              seed=options['seed'])

        checkpoint = recorder.path('adapted')
        source = recorder.run.artifacts.get(role=Artifact.CONSUMED, kind='clip')
        save_checkpoint(result.params, checkpoint, 'denoiser', provenance={
            **provenance(recorder),
            'clip': record.clip_id,
            'clip_sha256': source.sha256,
            'reverse': options['reverse'],
            'prompt': prompt.to_dict(),
            'loss': cfg.loss,
            'steps': cfg.steps,
        })
        recorder.produced(checkpoint, 'checkpoint', name='adapted')
        recorder.produced(write_loss_csv(recorder.path('losses.csv'), result.losses), 'csv', name='losses')
        diagnostics = recorder.path('diagnostics.json')
        diagnostics.write_text(json.dumps({**result.diagnostics, 'adaptation': cfg.to_dict()}, indent=2, sort_keys=True))
        recorder.produced(diagnostics, 'json', name='diagnostics')
