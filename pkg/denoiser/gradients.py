import logging
from dataclasses import dataclass

import torch

logger = logging.getLogger(__name__)


def _selected(params, labels):
    if labels is None:
        return list(params.named_parameters())
    return params.labelled_parameters(labels)


def gradient(params, loss_closure, labels=None):
    """
    Exact gradients of loss_closure(params) for every parameter, or only
    those whose label is in `labels`.
    """
    named = _selected(params, labels)
    loss = loss_closure(params)
    if not torch.is_tensor(loss) or not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in named}
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {
        name: torch.zeros_like(p) if g is None else g
        for (name, p), g in zip(named, grads)
    }


def sample_coordinates(params, labels, count, seed):
    """
    `count` random (parameter name, flat index) pairs among the labelled
    parameters
    """
    named = _selected(params, labels)
    sizes = torch.tensor([p.numel() for _, p in named])
    offsets = torch.cumsum(sizes, 0) - sizes
    gen = torch.Generator().manual_seed(seed)
    picks = torch.randint(int(sizes.sum()), (count,), generator=gen)
    coordinates = []
    for pick in picks.tolist():
        which = int((offsets <= pick).nonzero().max())
        coordinates.append((named[which][0], pick - int(offsets[which])))
    return coordinates


@dataclass
class GradientCheck:
    """
    Per-coordinate comparison of analytic and central-difference
    gradients. `relative` is |analytic - numeric| / max(|analytic|,
    |numeric|) with no floor, so small gradients are judged on their own
    scale; `absolute` is the raw difference.
    """
    rows: list

    @property
    def max_relative(self):
        return max((row['relative'] for row in self.rows), default=0.0)

    @property
    def max_absolute(self):
        return max((row['absolute'] for row in self.rows), default=0.0)

    def failures(self, rtol=1e-4, atol=1e-9):
        """
        Rows off by more than rtol relatively and atol absolutely
        """
        return [row for row in self.rows if row['relative'] >= rtol and row['absolute'] >= atol]

    def passes(self, rtol=1e-4, atol=1e-9):
        return not self.failures(rtol, atol)

    def to_dict(self, rtol=1e-4, atol=1e-9):
        return {
            'max_relative_error': self.max_relative,
            'max_absolute_error': self.max_absolute,
            'rtol': rtol,
            'atol': atol,
            'passed': self.passes(rtol, atol),
            'coordinates': self.rows,
        }


def finite_difference_check(params, loss_closure, coordinates, h=1e-5):
    """
    Compare analytic gradients with central differences at the given
    (parameter name, flat index) coordinates.
    """
    lookup = dict(params.named_parameters())
    names = sorted({name for name, _ in coordinates})
    analytic = gradient(params, loss_closure)
    rows = []
    with torch.no_grad():
        for name, index in coordinates:
            flat = lookup[name].data.view(-1)
            original = flat[index].item()
            flat[index] = original + h
            plus = float(loss_closure(params))
            flat[index] = original - h
            minus = float(loss_closure(params))
            flat[index] = original
            numeric = (plus - minus) / (2 * h)
            exact = float(analytic[name].view(-1)[index])
            absolute = abs(exact - numeric)
            scale = max(abs(exact), abs(numeric))
            rows.append({
                'name': name, 'index': index, 'analytic': exact, 'numeric': numeric,
                'absolute': absolute, 'relative': absolute / scale if scale > 0.0 else 0.0,
            })
    check = GradientCheck(rows)
    logger.debug('Finite-difference check over %d coordinates in %s: max relative %.3e, max absolute %.3e',
                 len(rows), names, check.max_relative, check.max_absolute)
    return check
