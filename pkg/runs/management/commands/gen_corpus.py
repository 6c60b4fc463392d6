from corpus.generator import SPLITS, build_corpus
from corpus.storage import write_corpus

from ..base import VMCCommand, option_or


class Command(VMCCommand):
    help = 'Render a synthetic corpus of labelled moving-shape clips'

    def add_command_arguments(self, parser):
        parser.add_argument('--count', type=int, help='Number of clips (default: corpus.train_clips)')
        parser.add_argument('--split', choices=SPLITS, default='train')
        parser.add_argument('--frame-count', type=int)
        parser.add_argument('--frame-size', type=int)
        parser.add_argument('--pixel-noise', type=float)

    def execute_run(self, recorder, config, **options):
        section = config['corpus']
        with recorder.timed('render'):
            records = build_corpus(
                option_or(options, 'count', section, 'train_clips'),
                seed=options['seed'],
                frame_count=option_or(options, 'frame_count', section),
                frame_size=option_or(options, 'frame_size', section),
                pixel_noise=option_or(options, 'pixel_noise', section),
                split=options['split'],
            )
            directory = recorder.path('corpus')
            write_corpus(directory, records)
        recorder.produced(directory, 'corpus', name='corpus')
