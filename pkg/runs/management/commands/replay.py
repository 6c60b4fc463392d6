import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from vmc_desk.errors import CheckpointError

from ...recorder import CONFIG_FILE

logger = logging.getLogger(__name__)

# artifact kinds expected to be byte-identical on replay; json and
# markdown outputs may carry timings
VERIFIED_KINDS = ('checkpoint', 'corpus', 'video', 'csv', 'image')


class Command(BaseCommand):
    help = 'Re-execute a run from its manifest.json'

    def add_arguments(self, parser):
        parser.add_argument('manifest', help='manifest.json of the run to replay')
        parser.add_argument('--run-dir', help='Directory for the replayed run')
        parser.add_argument('--verify', action='store_true',
                            help='Fail unless produced artifacts match the original byte for byte')

    def handle(self, *args, **options):
        path = Path(options['manifest'])
        if not path.is_file():
            raise CommandError(f'No manifest at {path}', returncode=CheckpointError.exit_code)
        manifest = json.loads(path.read_text())
        run_dir = Path(options['run_dir'] or settings.VMC_RUNS_ROOT / f'replay-{manifest["run_id"][:8]}')
        if (run_dir / 'manifest.json').exists():
            raise CommandError(f'{run_dir} already holds a run', returncode=2)

        replay_options = {**manifest['options'], 'config': str(path.parent / CONFIG_FILE), 'run_dir': str(run_dir)}
        logger.info('Replaying %s run %s into %s', manifest['command'], manifest['run_id'], run_dir)
        call_command(manifest['command'], **replay_options)

        if options['verify']:
            replayed = json.loads((run_dir / 'manifest.json').read_text())
            mismatched = compare_outputs(manifest['produced'], replayed['produced'])
            if mismatched:
                raise CommandError(f'Replayed artifacts differ from the original: {", ".join(mismatched)}',
                                   returncode=CheckpointError.exit_code)
        self.stdout.write(self.style.SUCCESS(f'Replayed run {manifest["run_id"]} into {run_dir}'))


def compare_outputs(original, replayed):
    """
    Names of verified artifacts whose sha256 differs or that went missing
    """
    replayed = {entry['name']: entry for entry in replayed}
    return [
        entry['name'] for entry in original
        if entry['kind'] in VERIFIED_KINDS
        and replayed.get(entry['name'], {}).get('sha256') != entry['sha256']
    ]
