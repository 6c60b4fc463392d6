"""
Procedural clips: one shaped subject moving over a textured background.

Positions are (row, col) in pixels of the base frame, measured to pixel
centres. Translations use integer velocities from integer starts, so at
integer frame times every subject mask lands exactly on the pixel grid.
"""
import logging
import math
from dataclasses import asdict, dataclass

import torch

from conditioning.prompts import StructuredPrompt
from conditioning.vocabulary import (
    BACKGROUND_LEVELS, INTENSITIES, MOTIONS, SHAPES, TEXTURE_AMPLITUDE, TEXTURES,
)
from vmc_desk.errors import EmptyCorpusError, InvalidRangeError, TrajectoryError, UnknownCategoryError

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 1
# every shape fits in a (2 * MASK_RADIUS + 1)-pixel square around its centre
MASK_RADIUS = 2
FOREGROUND_THRESHOLD = 0.5
ORBIT_RADIUS = 3.0
ORBIT_PERIOD = 8.0
BOUNCE_SPEED = 2
_EDGE = 1e-9


def _square(dr, dc):
    return (dr.abs() <= 2 + _EDGE) & (dc.abs() <= 2 + _EDGE)


def _circle(dr, dc):
    return dr ** 2 + dc ** 2 <= 5.0 + _EDGE


def _triangle(dr, dc):
    return (dr >= -2 - _EDGE) & (dr <= 2 + _EDGE) & (dc.abs() <= (dr + 2) / 2 + _EDGE)


def _cross(dr, dc):
    return (((dr.abs() <= 2 + _EDGE) & (dc.abs() <= 0.5 + _EDGE))
            | ((dc.abs() <= 2 + _EDGE) & (dr.abs() <= 0.5 + _EDGE)))


def _diamond(dr, dc):
    return dr.abs() + dc.abs() <= 2 + _EDGE


def _ring(dr, dc):
    r2 = dr ** 2 + dc ** 2
    return (r2 <= 6.25 + _EDGE) & (r2 >= 2.0 - _EDGE)


def _hbar(dr, dc):
    return (dr.abs() <= 1 + _EDGE) & (dc.abs() <= 2 + _EDGE)


def _vbar(dr, dc):
    return (dr.abs() <= 2 + _EDGE) & (dc.abs() <= 1 + _EDGE)


SHAPE_MASKS = {
    'square': _square,
    'circle': _circle,
    'triangle': _triangle,
    'cross': _cross,
    'diamond': _diamond,
    'ring': _ring,
    'hbar': _hbar,
    'vbar': _vbar,
}


def _reflect(p, lo, hi):
    span = hi - lo
    q = (p - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def _triangle_wave(time):
    phase = time % 2.0
    return phase if phase <= 1.0 else 2.0 - phase


@dataclass(frozen=True)
class MotionSpec:
    """
    Kinematics of one motion class.

    origin is the starting centre (the orbit centre for 'orbit');
    velocity is in pixels per frame; amplitude is the walking bob height or
    the orbit radius; bounds is the range the centre may occupy on each axis.
    """
    motion_class: str
    origin: tuple
    velocity: tuple = (0.0, 0.0)
    amplitude: float = 0.0
    period: float = 0.0
    phase: float = 0.0
    bounds: tuple = (MASK_RADIUS, 13)

    def __post_init__(self):
        if self.motion_class not in MOTIONS:
            raise UnknownCategoryError(f'"{self.motion_class}" is not a known motion class')
        object.__setattr__(self, 'origin', tuple(float(v) for v in self.origin))
        object.__setattr__(self, 'velocity', tuple(float(v) for v in self.velocity))
        object.__setattr__(self, 'bounds', tuple(self.bounds))

    def position(self, time):
        row, col = self.origin
        v_row, v_col = self.velocity
        if self.motion_class == 'orbit':
            angle = self.phase + 2 * math.pi * time / self.period
            return row + self.amplitude * math.cos(angle), col + self.amplitude * math.sin(angle)
        if self.motion_class == 'bounce':
            return _reflect(row + v_row * time, *self.bounds), col
        if self.motion_class == 'walk':
            return row - self.amplitude * _triangle_wave(time), col + v_col * time
        return row + v_row * time, col + v_col * time

    def trajectory(self, times):
        return torch.tensor([self.position(float(t)) for t in times], dtype=torch.float64)

    def check_bounds(self, times):
        lo, hi = self.bounds
        track = self.trajectory(times)
        if bool(((track < lo - _EDGE) | (track > hi + _EDGE)).any()):
            raise TrajectoryError(f'{self.motion_class} trajectory leaves [{lo}, {hi}] over {len(times)} frames')
        return track

    def to_dict(self):
        data = asdict(self)
        for key in ('origin', 'velocity', 'bounds'):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _randint(gen, low, high):
    """
    Uniform integer in [low, high]
    """
    if high < low:
        raise TrajectoryError(f'No room for the trajectory: range [{low}, {high}] is empty')
    return int(torch.randint(low, high + 1, (1,), generator=gen))


def make_motion_spec(motion_class, frame_count, seed, frame_size=16):
    """
    Draw in-bounds kinematics for motion_class over frame_count frames
    """
    if motion_class not in MOTIONS:
        raise UnknownCategoryError(f'"{motion_class}" is not a known motion class')
    if frame_count < 2:
        raise InvalidRangeError(f'A clip needs at least 2 frames, got {frame_count}')
    gen = torch.Generator().manual_seed(seed)
    lo, hi = MASK_RADIUS, frame_size - 1 - MASK_RADIUS
    travel = frame_count - 1
    bounds = (lo, hi)

    def sign():
        return 1 if _randint(gen, 0, 1) else -1

    def start(velocity):
        if velocity > 0:
            return _randint(gen, lo, hi - velocity * travel)
        if velocity < 0:
            return _randint(gen, lo - velocity * travel, hi)
        return _randint(gen, lo, hi)

    if motion_class.startswith('translate-') or motion_class == 'diagonal':
        velocity = {
            'translate-right': (0, 1),
            'translate-left': (0, -1),
            'translate-up': (-1, 0),
            'translate-down': (1, 0),
        }.get(motion_class) or (sign(), sign())
        origin = (start(velocity[0]), start(velocity[1]))
        spec = MotionSpec(motion_class, origin, velocity, bounds=bounds)
    elif motion_class == 'walk':
        direction = sign()
        origin = (_randint(gen, lo + 1, hi), start(direction))
        spec = MotionSpec(motion_class, origin, (0, direction), amplitude=1.0, period=2.0, bounds=bounds)
    elif motion_class == 'bounce':
        velocity = (sign() * BOUNCE_SPEED, 0)
        origin = (_randint(gen, lo, hi), _randint(gen, lo, hi))
        spec = MotionSpec(motion_class, origin, velocity, bounds=bounds)
    else:
        radius = min(int(ORBIT_RADIUS), (hi - lo) // 2)
        origin = (_randint(gen, lo + radius, hi - radius), _randint(gen, lo + radius, hi - radius))
        phase = 2 * math.pi * float(torch.rand(1, generator=gen))
        spec = MotionSpec(motion_class, origin, amplitude=float(radius), period=ORBIT_PERIOD * sign(),
                          phase=phase, bounds=bounds)
    spec.check_bounds(range(frame_count))
    return spec


def _check_attributes(appearance, background):
    shape, intensity = appearance
    texture, level = background
    if shape not in SHAPES or intensity not in INTENSITIES:
        raise UnknownCategoryError(f'Unknown appearance {tuple(appearance)}')
    if texture not in TEXTURES or level not in BACKGROUND_LEVELS:
        raise UnknownCategoryError(f'Unknown background {tuple(background)}')
    return shape, intensity, texture, level


def _pixel_coordinates(frame_size, scale):
    size = frame_size * scale
    return (torch.arange(size, dtype=torch.float64) + 0.5) / scale - 0.5


def render_background(texture, level, frame_size=16, scale=1):
    coords = _pixel_coordinates(frame_size, scale)
    index = torch.floor(coords + 0.5).long()
    rows, cols = index[:, None], index[None, :]
    if texture == 'flat':
        pattern = torch.zeros(len(index), len(index), dtype=torch.float64)
    elif texture == 'stripes':
        pattern = ((cols // 2) % 2 * 2 - 1).expand(len(index), -1).double()
    elif texture == 'checker':
        pattern = (((rows // 2) + (cols // 2)) % 2 * 2 - 1).double()
    else:
        pattern = ((rows % 4 == 1) & (cols % 4 == 1)).double()
    return BACKGROUND_LEVELS[level] + TEXTURE_AMPLITUDE * pattern


def render_frames(spec, appearance, background, times, scale=1, seed=0, frame_size=16, pixel_noise=0.0):
    """
    Render the clip at arbitrary (fractional) frame times and at `scale`
    times the base resolution. Returns (len(times), (frame_size * scale)^2)
    float32 frames in [0, 1].
    """
    shape, intensity, texture, level = _check_attributes(appearance, background)
    if scale < 1:
        raise InvalidRangeError(f'scale must be >= 1, got {scale}')
    coords = _pixel_coordinates(frame_size, scale)
    canvas = render_background(texture, level, frame_size, scale)
    mask_of = SHAPE_MASKS[shape]
    frames = []
    for row, col in spec.check_bounds(times).tolist():
        mask = mask_of(coords[:, None] - row, coords[None, :] - col)
        frames.append(torch.where(mask, torch.full_like(canvas, INTENSITIES[intensity]), canvas))
    video = torch.stack(frames).reshape(len(frames), -1)
    if pixel_noise > 0:
        gen = torch.Generator().manual_seed(seed)
        video = (video + pixel_noise * torch.randn(video.shape, generator=gen, dtype=video.dtype)).clamp(0.0, 1.0)
    return video.float()


def generate_clip(motion, appearance, background, N, seed, frame_size=16, pixel_noise=0.0):
    """
    Render N frames of `motion` and the prompt naming all three factors
    """
    if N < 2:
        raise InvalidRangeError(f'A clip needs at least 2 frames, got {N}')
    video = render_frames(motion, appearance, background, range(N), seed=seed,
                          frame_size=frame_size, pixel_noise=pixel_noise)
    prompt = StructuredPrompt(motion.motion_class, tuple(appearance), tuple(background))
    return video, prompt


def reverse_clip(v):
    return v.flip(-2)


@dataclass(frozen=True)
class CentroidTrack:
    """
    (N, 2) float64 (row, col) track plus the indexes of frames without
    foreground, whose position was carried over from a neighbour.
    """
    track: torch.Tensor
    empty_frames: tuple = ()

    @property
    def velocity(self):
        return self.track[1:] - self.track[:-1]


def extract_centroid_track(v, threshold=FOREGROUND_THRESHOLD):
    """
    Intensity-weighted centroid of the pixels above `threshold` in every
    frame of an (N, d) video with square frames.
    """
    frames = v.detach().to(torch.float64)
    side = math.isqrt(frames.shape[-1])
    if side * side != frames.shape[-1]:
        raise InvalidRangeError(f'Frame dimension {frames.shape[-1]} is not a square')
    grid = frames.reshape(-1, side, side)
    weights = torch.where(grid > threshold, grid, torch.zeros_like(grid))
    mass = weights.sum(dim=(1, 2))
    index = torch.arange(side, dtype=torch.float64)
    rows = (weights.sum(dim=2) * index).sum(dim=1) / mass.clamp_min(1e-300)
    cols = (weights.sum(dim=1) * index).sum(dim=1) / mass.clamp_min(1e-300)
    track = torch.stack([rows, cols], dim=1)

    empty = [n for n in range(len(mass)) if float(mass[n]) == 0.0]
    if empty:
        present = [n for n in range(len(mass)) if float(mass[n]) > 0.0]
        if not present:
            logger.warning('No foreground in any of %d frames', len(mass))
            return CentroidTrack(track=torch.full_like(track, float('nan')), empty_frames=tuple(empty))
        logger.warning('No foreground in frames %s; carrying positions over', empty)
        for n in range(len(mass)):
            if n in empty:
                track[n] = track[n - 1] if n > 0 else track[present[0]]
    return CentroidTrack(track=track, empty_frames=tuple(empty))


def classify_track(track, tol=0.25):
    """
    Name the motion class whose kinematics produce the (N, 2) track
    """
    track = getattr(track, 'track', track)
    d = track[1:] - track[:-1]
    dy, dx = d[:, 0], d[:, 1]

    def still(x):
        return bool((x.abs() < tol).all())

    def constant(x):
        return bool(((x - x[0]).abs() < tol).all()) and abs(float(x[0])) >= 0.5

    def alternating(x):
        signs = torch.sign(x)
        return bool((x.abs() >= 0.5).all()) and bool((signs[1:] == -signs[:-1]).all())

    if still(dy) and constant(dx):
        return 'translate-right' if float(dx[0]) > 0 else 'translate-left'
    if still(dx) and constant(dy):
        return 'translate-down' if float(dy[0]) > 0 else 'translate-up'
    if constant(dx) and constant(dy):
        return 'diagonal'
    if constant(dx) and alternating(dy):
        return 'walk'
    if still(dx) and bool((dy > tol).any()) and bool((dy < -tol).any()):
        return 'bounce'
    return 'orbit'


def heldout_shape(motion_class):
    """
    The shape never paired with motion_class in the training split
    """
    return SHAPES[(MOTIONS.index(motion_class) * 3 + 1) % len(SHAPES)]


def is_heldout(motion_class, shape):
    return heldout_shape(motion_class) == shape


@dataclass(frozen=True, eq=False)
class ClipRecord:
    clip_id: str
    video: torch.Tensor
    prompt: StructuredPrompt
    motion: MotionSpec
    seed: int
    split: str = 'train'

    @property
    def pair(self):
        return self.video, self.prompt


SPLITS = ('train', 'heldout', 'all')


def _pick(gen, names):
    return names[int(torch.randint(len(names), (1,), generator=gen))]


def build_corpus(count, seed, frame_count=8, frame_size=16, pixel_noise=0.0, split='train'):
    """
    Draw `count` clips. The 'train' split never pairs a motion with its
    held-out shape; 'heldout' only uses those pairs; 'all' draws freely.
    """
    if split not in SPLITS:
        raise InvalidRangeError(f'Unknown corpus split "{split}", expected one of {SPLITS}')
    if count < 1:
        raise EmptyCorpusError(f'A corpus needs at least one clip, got {count}')
    gen = torch.Generator().manual_seed(seed)
    records = []
    for i in range(count):
        motion_class = _pick(gen, MOTIONS)
        if split == 'heldout':
            shape = heldout_shape(motion_class)
        else:
            shape = _pick(gen, SHAPES)
            while split == 'train' and is_heldout(motion_class, shape):
                shape = _pick(gen, SHAPES)
        appearance = (shape, _pick(gen, tuple(INTENSITIES)))
        background = (_pick(gen, TEXTURES), _pick(gen, tuple(BACKGROUND_LEVELS)))
        clip_seed = int(torch.randint(2 ** 31 - 1, (1,), generator=gen))
        spec = make_motion_spec(motion_class, frame_count, clip_seed, frame_size)
        video, prompt = generate_clip(spec, appearance, background, frame_count, clip_seed,
                                      frame_size=frame_size, pixel_noise=pixel_noise)
        records.append(ClipRecord(f'{split}-{seed}-{i:05d}', video, prompt, spec, clip_seed, split))
    logger.debug('Built %d %s clips from seed %d', count, split, seed)
    return records


def training_pairs(records):
    return [record.pair for record in records]
