import json

from denoiser.checkpoints import save_checkpoint
from diffusion.training import write_loss_csv
from metrics.classifier import ClassifierConfig, ClassifierTrainingConfig, train_classifier

from ..base import VMCCommand, overrides, provenance


class Command(VMCCommand):
    help = 'Train the factor classifier behind the prompt-alignment score'

    def add_command_arguments(self, parser):
        parser.add_argument('--steps', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--train-clips', type=int)

    def execute_run(self, recorder, config, **options):
        cfg = ClassifierTrainingConfig.from_dict(config['classifier'],
                                                 **overrides(options, 'steps', 'learning_rate', 'train_clips'))
        classifier_config = ClassifierConfig.from_dict({
            **config['classifier'],
            'frame_count': config['corpus']['frame_count'],
            'frame_size': config['corpus']['frame_size'],
        })
        with recorder.timed('train'):
            result = train_classifier(cfg, seed=options['seed'], classifier_config=classifier_config)

        checkpoint = recorder.path('classifier')
        save_checkpoint(result.params, checkpoint, 'classifier', provenance=provenance(recorder))
        recorder.produced(checkpoint, 'checkpoint', name='classifier')
        recorder.produced(write_loss_csv(recorder.path('losses.csv'), result.losses), 'csv', name='losses')
        accuracy = recorder.path('accuracy.json')
        accuracy.write_text(json.dumps(result.accuracy, indent=2, sort_keys=True))
        recorder.produced(accuracy, 'json', name='accuracy')
