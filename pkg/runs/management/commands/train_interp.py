from cascade.interpolation import InterpolationConfig, train_interpolator
from denoiser.checkpoints import save_checkpoint
from denoiser.network import DenoiserConfig
from diffusion.training import write_loss_csv
from schedule.kernels import schedule_from_config

from ..base import VMCCommand, overrides, provenance


class Command(VMCCommand):
    help = 'Train the frozen temporal interpolation stage (8 keyframes to 29 frames)'

    def add_command_arguments(self, parser):
        parser.add_argument('--steps', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--train-clips', type=int)

    def execute_run(self, recorder, config, **options):
        cfg = InterpolationConfig.from_dict(config['interpolation'],
                                            **overrides(options, 'steps', 'learning_rate', 'train_clips'))
        with recorder.timed('train'):
            result = train_interpolator(cfg, seed=options['seed'],
                                        denoiser_config=DenoiserConfig.from_dict(config['denoiser']),
                                        schedule=schedule_from_config(config['schedule']),
                                        frame_count=config['corpus']['frame_count'])

        checkpoint = recorder.path('interpolator')
        save_checkpoint(result.params, checkpoint, 'interpolator', provenance=provenance(recorder))
        recorder.produced(checkpoint, 'checkpoint', name='interpolator')
        recorder.produced(write_loss_csv(recorder.path('losses.csv'), result.losses), 'csv', name='losses')
