from cascade.upscaler import UpscalerConfig, UpscalerTrainingConfig, train_upscaler
from denoiser.checkpoints import save_checkpoint
from diffusion.training import write_loss_csv

from ..base import VMCCommand, overrides, provenance


class Command(VMCCommand):
    help = 'Train the frozen 2x spatial super-resolution stage'

    def add_command_arguments(self, parser):
        parser.add_argument('--steps', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--train-clips', type=int)

    def execute_run(self, recorder, config, **options):
        cfg = UpscalerTrainingConfig.from_dict(config['upscaler'],
                                               **overrides(options, 'steps', 'learning_rate', 'train_clips'))
        upscaler_config = UpscalerConfig.from_dict({**config['upscaler'], 'frame_size': config['corpus']['frame_size']})
        with recorder.timed('train'):
            result = train_upscaler(cfg, seed=options['seed'], upscaler_config=upscaler_config,
                                    frame_count=config['corpus']['frame_count'])

        checkpoint = recorder.path('upscaler')
        save_checkpoint(result.params, checkpoint, 'upscaler', provenance=provenance(recorder))
        recorder.produced(checkpoint, 'checkpoint', name='upscaler')
        recorder.produced(write_loss_csv(recorder.path('losses.csv'), result.losses), 'csv', name='losses')
