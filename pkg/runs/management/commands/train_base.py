from corpus.generator import build_corpus, training_pairs
from corpus.storage import read_corpus
from denoiser.checkpoints import save_checkpoint
from denoiser.network import DenoiserConfig
from diffusion.training import TrainingConfig, train_base, write_loss_csv
from schedule.kernels import schedule_from_config

from ..base import VMCCommand, overrides, provenance


class Command(VMCCommand):
    help = 'Train the base keyframe denoiser by epsilon matching'

    def add_command_arguments(self, parser):
        parser.add_argument('--corpus', help='Corpus directory (default: render corpus.train_clips clips from --seed)')
        parser.add_argument('--steps', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--batch-size', type=int)

    def execute_run(self, recorder, config, **options):
        if options['corpus']:
            records = read_corpus(options['corpus'], split='train')
            recorder.consumed(options['corpus'], 'corpus', name='corpus')
        else:
            section = config['corpus']
            records = build_corpus(section['train_clips'], seed=options['seed'], frame_count=section['frame_count'],
                                   frame_size=section['frame_size'], pixel_noise=section['pixel_noise'])
        cfg = TrainingConfig.from_dict(config['base_training'],
                                       **overrides(options, 'steps', 'learning_rate', 'batch_size'))
        with recorder.timed('train'):
            result = train_base(training_pairs(records), cfg, seed=options['seed'],
                                denoiser_config=DenoiserConfig.from_dict(config['denoiser']),
                                schedule=schedule_from_config(config['schedule']))

        checkpoint = recorder.path('denoiser')
        save_checkpoint(result.params, checkpoint, 'denoiser', provenance=provenance(recorder))
        recorder.produced(checkpoint, 'checkpoint', name='denoiser')
        recorder.produced(write_loss_csv(recorder.path('losses.csv'), result.losses), 'csv', name='losses')
