import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from conditioning.prompts import StructuredPrompt
from corpus.generator import reverse_clip
from corpus.storage import CLIP_DIR, find_clip, save_video
from denoiser.checkpoints import load_checkpoint
from vmc_desk.config import load_config
from vmc_desk.errors import ConfigError, VMCError

from ..recorder import RunRecorder

logger = logging.getLogger(__name__)

# options every Django command accepts; they are not part of a run's inputs
DJANGO_OPTIONS = {'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color', 'skip_checks'}


class VMCCommand(BaseCommand):
    """
    A command that runs inside a RunRecorder.

    Subclasses add their own arguments in add_command_arguments and do
    their work in execute_run. Randomized commands require --seed.
    VMCError exit codes become the process exit code.
    """
    randomized = True

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON file deep-merged over settings.VMC')
        parser.add_argument('--run-dir', help='Directory for this run (default: VMC_RUNS_ROOT/<command>-<id>)')
        if self.randomized:
            parser.add_argument('--seed', type=int, required=True, help='Seed for every random draw of the run')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        recorded = {key: value for key, value in options.items() if key not in DJANGO_OPTIONS}
        try:
            config = load_config(options.get('config'))
            with RunRecorder(self.command_name, recorded, config, seed=options.get('seed'),
                             run_dir=options.get('run_dir')) as recorder:
                self.execute_run(recorder, config, **options)
        except VMCError as e:
            raise CommandError(str(e), returncode=e.exit_code) from e
        self.stdout.write(self.style.SUCCESS(
            f'{self.command_name} run {recorder.run.run_id} written to {recorder.directory}'))

    def execute_run(self, recorder, config, **options):
        raise NotImplementedError('subclasses of VMCCommand must provide an execute_run() method')

    # Helpers shared by several commands

    def load_stage(self, recorder, path, kind):
        if not path:
            raise ConfigError(f'A {kind} checkpoint directory is required')
        module, manifest = load_checkpoint(path, expected_kind=kind)
        recorder.consumed(path, 'checkpoint', name=kind, content_hash=manifest['content_hash'])
        return module

    def load_source(self, recorder, corpus, clip, reverse=False):
        """
        The clip to customize from, reversed in time on request
        """
        container = Path(clip).with_suffix('.json')
        if not corpus and not container.is_file():
            raise ConfigError('--corpus is required unless --clip is a clip container path')
        record = find_clip(corpus, clip)
        if container.is_file():
            path = container.with_suffix('.bin')
        else:
            path = Path(corpus) / CLIP_DIR / f'{record.clip_id}.bin'
        recorder.consumed(path, 'clip', name=record.clip_id)
        video = reverse_clip(record.video) if reverse else record.video
        return record, video

    def parse_prompt(self, text):
        return StructuredPrompt.from_json(text)

    def save_output_video(self, recorder, name, video, **header):
        path = save_video(recorder.path(name), video, **header)
        recorder.produced(path, 'video', name=name)
        return path


def option_or(options, name, section, key=None):
    """
    The command-line value of `name` if given, else the config section's
    """
    value = options.get(name)
    return section[key or name] if value is None else value


def overrides(options, *names):
    """
    Non-empty command-line values of `names`, for a config's from_dict
    """
    return {name: options[name] for name in names if options.get(name) is not None}


def provenance(recorder):
    return {'command': recorder.run.command, 'seed': recorder.run.seed, 'git_describe': recorder.run.git_describe}
