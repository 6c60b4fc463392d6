from cascade.pipeline import INVERSION_CONDITIONING
from conditioning.prompts import appearance_invariant, encode_prompt
from diffusion.sampling import ddim_invert
from schedule.kernels import schedule_from_config

from ..base import VMCCommand, option_or


class Command(VMCCommand):
    help = 'DDIM-invert a clip to its deepest-step latent'
    randomized = False

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Denoiser checkpoint directory')
        parser.add_argument('--corpus', help='Corpus directory holding --clip')
        parser.add_argument('--clip', required=True, help='Clip id in --corpus, or a clip container path')
        parser.add_argument('--steps', type=int, help='Inversion steps (default: pipeline.inversion_steps)')
        parser.add_argument('--invert-with', choices=INVERSION_CONDITIONING)
        parser.add_argument('--reverse', action='store_true')

    def execute_run(self, recorder, config, **options):
        params = self.load_stage(recorder, options['checkpoint'], 'denoiser')
        record, video = self.load_source(recorder, options['corpus'], options['clip'], options['reverse'])
        section = config['pipeline']
        steps = option_or(options, 'steps', section, 'inversion_steps')
        invert_with = option_or(options, 'invert_with', section)
        prompt = appearance_invariant(record.prompt) if invert_with == 'invariant' else record.prompt
        with recorder.timed('invert'):
            inversion = ddim_invert(params, video, encode_prompt(prompt), steps,
                                    schedule_from_config(config['schedule']))
        self.save_output_video(recorder, 'latent', inversion.latent, prompt=prompt,
                               clip_id=record.clip_id, timestep=inversion.grid[-1], steps=steps)
