import json
from pathlib import Path

from corpus.storage import load_video
from metrics.reports import markdown_table, read_metric_rows, save_frame_grid, summarise
from vmc_desk.errors import ConfigError

from ..base import VMCCommand

GRID_VIDEOS = ('source', 'keyframes', 'interpolated', 'final')


class Command(VMCCommand):
    help = 'Render frame grids of generate runs and collect metric tables'
    randomized = False

    def add_command_arguments(self, parser):
        parser.add_argument('--runs', nargs='+', required=True, help='Run directories to report on')

    def execute_run(self, recorder, config, **options):
        tables = {}
        for run_dir in map(Path, options['runs']):
            if not (run_dir / 'manifest.json').is_file():
                raise ConfigError(f'{run_dir} is not a run directory (no manifest.json)')
            command = json.loads((run_dir / 'manifest.json').read_text())['command']
            if (run_dir / 'result.json').is_file():
                videos = [load_video(run_dir / name)[0] for name in GRID_VIDEOS]
                grid = save_frame_grid(recorder.path(f'{run_dir.name}.pgm'), videos)
                recorder.produced(grid, 'image', name=run_dir.name)
            if (run_dir / 'metrics.csv').is_file():
                recorder.consumed(run_dir / 'metrics.csv', 'csv', name=f'{run_dir.name}/metrics')
                tables[f'{command} {run_dir.name}'] = summarise(read_metric_rows(run_dir / 'metrics.csv'))

        report = recorder.path('report.md')
        report.write_text(markdown_table(tables) if tables else 'No metric tables in the reported runs.\n')
        recorder.produced(report, 'markdown', name='report')
