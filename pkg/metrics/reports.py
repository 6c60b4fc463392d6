import csv
import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .scores import METRIC_LABELS

logger = logging.getLogger(__name__)

METRIC_FIELDS = ('clip_id', 'metric', 'value')

# column order of the comparison table: alignment, consistency, motion
TABLE_COLUMNS = ('prompt_alignment', 'frame_consistency', 'motion_preservation')


def write_metric_rows(path, rows):
    """
    Write (clip_id, metric, value) rows; metric is the substitution label
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(METRIC_FIELDS)
        for clip_id, metric, value in rows:
            writer.writerow([clip_id, METRIC_LABELS.get(metric, metric), _format(value)])
    return path


def read_metric_rows(path):
    with Path(path).open(newline='') as handle:
        return [(row['clip_id'], row['metric'], float(row['value'])) for row in csv.DictReader(handle)]


def _format(value):
    return 'nan' if value is None or math.isnan(value) else f'{value:.6f}'


def summarise(rows):
    """
    Mean of every metric over clips, ignoring NaN, keyed by metric name
    """
    collected = {}
    for _, metric, value in rows:
        collected.setdefault(metric, []).append(value)
    summary = {}
    for metric, values in collected.items():
        finite = [v for v in values if v is not None and not math.isnan(v)]
        summary[metric] = sum(finite) / len(finite) if finite else float('nan')
    return summary


def markdown_table(results):
    """
    One row per method/arm: {name: {metric: mean}}. Column headers carry the
    substitution label of each score.
    """
    labels = {label: metric for metric, label in METRIC_LABELS.items()}
    header = ['Method'] + [METRIC_LABELS[metric] for metric in TABLE_COLUMNS]
    lines = [
        '| ' + ' | '.join(header) + ' |',
        '|' + '---|' * len(header),
    ]
    for name, summary in results.items():
        summary = {labels.get(metric, metric): value for metric, value in summary.items()}
        cells = [_format(summary[metric]) if metric in summary else '-' for metric in TABLE_COLUMNS]
        lines.append('| ' + ' | '.join([name] + cells) + ' |')
    return '\n'.join(lines) + '\n'


def frame_grid(videos, gap=1):
    """
    Tile (N, d) videos into one uint8 image: one row per video, one column
    per frame. Rows of different frame counts are left-aligned.
    """
    frames = [np.clip(v.detach().cpu().double().numpy(), 0.0, 1.0) for v in videos]
    side = max(math.isqrt(f.shape[-1]) for f in frames)
    columns = max(f.shape[0] for f in frames)
    height = len(frames) * side + (len(frames) - 1) * gap
    width = columns * side + (columns - 1) * gap
    canvas = np.zeros((height, width), dtype=np.uint8)
    for r, video in enumerate(frames):
        size = math.isqrt(video.shape[-1])
        repeat = side // size
        for c, frame in enumerate(video):
            image = frame.reshape(size, size).repeat(repeat, axis=0).repeat(repeat, axis=1)
            top, left = r * (side + gap), c * (side + gap)
            canvas[top:top + side, left:left + side] = np.round(image * 255).astype(np.uint8)
    return canvas


def save_frame_grid(path, videos, gap=1):
    """
    Save videos as a portable graymap (.pgm) frame grid
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame_grid(videos, gap=gap)).save(path, format='PPM')
    logger.info('Wrote frame grid %s', path)
    return path
