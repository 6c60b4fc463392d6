"""
Factor classifier used by the prompt-alignment score.

Motion is read from a soft foreground centroid track; shape and intensity
from max-pooled convolution features of the foreground map. The held-out
accuracy measured after training is stored as a buffer so it travels with
the checkpoint.
"""
import logging
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from django.conf import settings
from torch import nn

from conditioning.vocabulary import INTENSITIES, MOTIONS, SHAPES
from corpus.generator import FOREGROUND_THRESHOLD, build_corpus
from diffusion.training import TrainingResult
from diffusion.video import model_dtype
from vmc_desk.config import section_kwargs
from vmc_desk.errors import InvalidRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

HEADS = {
    'motion': MOTIONS,
    'shape': SHAPES,
    'intensity': tuple(INTENSITIES),
}


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_dim: int = 128
    channels: int = 32
    frame_count: int = 8
    frame_size: int = 16

    def __post_init__(self):
        if min(self.hidden_dim, self.channels, self.frame_size) < 1 or self.frame_count < 2:
            raise InvalidRangeError('Classifier sizes must be >= 1 and frame_count >= 2')

    @property
    def frame_dim(self):
        return self.frame_size * self.frame_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**section_kwargs(data, cls.__dataclass_fields__))


@dataclass(frozen=True)
class ClassifierTrainingConfig:
    steps: int = 1500
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    train_clips: int = 512
    heldout_clips: int = 128
    min_accuracy: float = 0.95
    log_every: int = 100

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.train_clips, self.heldout_clips) < 1:
            raise InvalidRangeError('Classifier steps, batch size and clip counts must be >= 1')
        if not 0.0 <= self.min_accuracy <= 1.0:
            raise InvalidRangeError(f'min_accuracy must lie in [0, 1], got {self.min_accuracy}')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, **overrides):
        return cls(**{**section_kwargs(data, cls.__dataclass_fields__), **overrides})


def soft_centroids(foreground):
    """
    (B, N, S, S) non-negative maps -> (B, N, 2) weighted (row, col) centroids
    """
    side = foreground.shape[-1]
    index = torch.arange(side, dtype=foreground.dtype, device=foreground.device)
    mass = foreground.sum(dim=(-2, -1)).clamp_min(1e-6)
    rows = (foreground.sum(dim=-1) * index).sum(dim=-1) / mass
    cols = (foreground.sum(dim=-2) * index).sum(dim=-1) / mass
    return torch.stack([rows, cols], dim=-1)


class FactorClassifier(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        width, hidden = config.channels, config.hidden_dim
        self.features = nn.Sequential(
            nn.Conv2d(1, width, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.GELU(),
        )
        self.appearance = nn.Sequential(nn.Linear(width + 1, hidden), nn.GELU())
        self.motion = nn.Sequential(
            nn.Linear(2 * (config.frame_count - 1), hidden),
            nn.GELU(),
            nn.Linear(hidden, len(MOTIONS)),
        )
        self.shape = nn.Linear(hidden, len(SHAPES))
        self.intensity = nn.Linear(hidden, len(INTENSITIES))
        self.register_buffer('heldout_accuracy', torch.zeros(()))

    def forward(self, video):
        """
        (N, d) or (B, N, d) clips -> dict of logits per head, each (B, classes)
        """
        cfg = self.config
        if video.dim() == 2:
            video = video[None]
        if video.shape[-2:] != (cfg.frame_count, cfg.frame_dim):
            raise ShapeMismatchError(
                f'Classifier expects ({cfg.frame_count}, {cfg.frame_dim}) clips, got {tuple(video.shape[-2:])}')
        batch, side = video.shape[0], cfg.frame_size
        foreground = F.relu(video.to(model_dtype(self)) - FOREGROUND_THRESHOLD)
        grid = foreground.reshape(batch, cfg.frame_count, side, side)

        track = soft_centroids(grid)
        steps = (track[:, 1:] - track[:, :-1]).reshape(batch, -1)

        pooled = self.features(grid.reshape(-1, 1, side, side)).amax(dim=(-2, -1))
        peak = grid.reshape(batch * cfg.frame_count, -1).amax(dim=-1, keepdim=True)
        frame_features = torch.cat([pooled, peak], dim=-1).reshape(batch, cfg.frame_count, -1)
        appearance = self.appearance(frame_features.mean(dim=1))
        return {
            'motion': self.motion(steps),
            'shape': self.shape(appearance),
            'intensity': self.intensity(appearance),
        }

    @torch.no_grad()
    def predict_proba(self, video):
        """
        Class probabilities of a single (N, d) clip, one 1-D tensor per head
        """
        return {head: logits.softmax(dim=-1)[0] for head, logits in self(video).items()}

    @staticmethod
    def class_index(head, name):
        return HEADS[head].index(name)


@dataclass
class ClassifierResult(TrainingResult):
    accuracy: dict = None


def init_classifier(cfg, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return FactorClassifier(cfg)


def factor_labels(records):
    """
    {head: (M,) long} class indexes of each record's prompt
    """
    return {
        'motion': torch.tensor([MOTIONS.index(r.prompt.motion) for r in records]),
        'shape': torch.tensor([SHAPES.index(r.prompt.attribute('shape')) for r in records]),
        'intensity': torch.tensor([HEADS['intensity'].index(r.prompt.attribute('intensity')) for r in records]),
    }


@torch.no_grad()
def evaluate_classifier(classifier, records):
    """
    Per-head accuracy on `records` plus their mean under 'mean'
    """
    videos = torch.stack([r.video for r in records])
    labels = factor_labels(records)
    logits = classifier(videos)
    accuracy = {head: float((logits[head].argmax(dim=-1) == labels[head]).double().mean()) for head in HEADS}
    accuracy['mean'] = sum(accuracy[head] for head in HEADS) / len(HEADS)
    return accuracy


def train_classifier(cfg, seed, classifier_config=None):
    """
    Fit the three heads on an 'all' split corpus, then measure accuracy on
    a second corpus drawn from seed + 1 and store the weakest head's
    accuracy in the classifier.
    """
    classifier_config = classifier_config or ClassifierConfig.from_dict(
        {**settings.VMC['classifier'], 'frame_count': settings.VMC['corpus']['frame_count'],
         'frame_size': settings.VMC['corpus']['frame_size']})
    records = build_corpus(cfg.train_clips, seed=seed, frame_count=classifier_config.frame_count,
                           frame_size=classifier_config.frame_size, split='all')
    videos = torch.stack([r.video for r in records])
    labels = factor_labels(records)
    logger.info('Training factor classifier on %d clips', len(records))

    classifier = init_classifier(classifier_config, seed)
    classifier.train()
    optimizer = torch.optim.AdamW(classifier.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for step in range(1, cfg.steps + 1):
        index = torch.randint(len(records), (cfg.batch_size,), generator=gen)
        logits = classifier(videos[index])
        loss = sum(F.cross_entropy(logits[head], labels[head][index]) for head in HEADS)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if step % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('classifier step %d/%d: loss %.4f', step, cfg.steps, sum(recent) / len(recent))
    classifier.eval()

    heldout = build_corpus(cfg.heldout_clips, seed=seed + 1, frame_count=classifier_config.frame_count,
                           frame_size=classifier_config.frame_size, split='all')
    accuracy = evaluate_classifier(classifier, heldout)
    classifier.heldout_accuracy.fill_(min(accuracy[head] for head in HEADS))
    logger.info('Classifier held-out accuracy: %s', ', '.join(f'{k} {v:.3f}' for k, v in accuracy.items()))
    if float(classifier.heldout_accuracy) < cfg.min_accuracy:
        logger.warning('Classifier held-out accuracy %.3f is below %.2f; prompt alignment will refuse it',
                       float(classifier.heldout_accuracy), cfg.min_accuracy)
    return ClassifierResult(params=classifier, losses=losses, accuracy=accuracy)

