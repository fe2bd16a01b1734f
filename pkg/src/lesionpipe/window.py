"""Sliding-window stitching and flip test-time augmentation.

A predictor is any callable ``predictor(patch, location)`` where ``patch`` is
a ``(C, h, w, d)`` view of the (possibly flipped) input and ``location`` a
:class:`PatchLocation`. It must return a ``(3, h, w, d)`` array in [0, 1].
Network-style predictors ignore ``location``; file-backed ones use it to cut
the matching region out of a precomputed field.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import PredictorError, ValidationError
from .volume import ALL_FLIPS, FlipSpec, as_prob_map, as_volume, flip_view


@dataclass(frozen=True)
class PatchLocation:
    slices: tuple[slice, slice, slice]  # in the flipped frame seen by the predictor
    flip: FlipSpec
    volume_shape: tuple[int, int, int]

    def original_slices(self) -> tuple[slice, slice, slice]:
        out = []
        for axis, sl in enumerate(self.slices):
            if self.flip[axis]:
                n = self.volume_shape[axis]
                out.append(slice(n - sl.stop, n - sl.start))
            else:
                out.append(sl)
        return tuple(out)


Predictor = Callable[[np.ndarray, PatchLocation], np.ndarray]


def _round_half_down(x: float) -> int:
    # ties go down so a 0.5 overlap never leaves interior voxels singly covered
    return int(math.ceil(x - 0.5))


def window_starts(length: int, window: int, overlap: float) -> list[int]:
    if not 0 <= overlap < 1:
        raise ValidationError(f"overlap must be in [0, 1), got {overlap}")
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    if window > length:
        raise ValidationError(f"window {window} larger than axis length {length}")
    if window == length:
        return [0]
    stride = _round_half_down(window * (1 - overlap))
    if stride < 1:
        raise ValidationError(f"overlap {overlap} gives stride < 1 for window {window}")
    last = length - window
    starts = []
    i = 0
    while True:
        s = min(i * stride, last)
        starts.append(s)
        if s >= last:
            break
        i += 1
    return sorted(set(starts))


@dataclass(frozen=True)
class WindowGrid:
    window: tuple[int, int, int] = (128, 128, 128)
    overlap: float = 0.5
    blend: str = "uniform"

    def __post_init__(self):
        if self.blend not in ("uniform", "gaussian"):
            raise ValidationError(f"blend must be 'uniform' or 'gaussian', got {self.blend!r}")

    def starts(self, shape) -> list[list[int]]:
        return [window_starts(n, w, self.overlap) for n, w in zip(shape, self.window)]

    def windows(self, shape) -> list[tuple[slice, slice, slice]]:
        per_axis = self.starts(shape)
        return [
            tuple(slice(s, s + w) for s, w in zip(corner, self.window))
            for corner in itertools.product(*per_axis)
        ]


def gaussian_importance(window, sigma_scale: float = 0.125) -> np.ndarray:
    axes = []
    for w in window:
        x = np.arange(w, dtype=np.float64) - (w - 1) / 2
        sigma = max(w * sigma_scale, 1e-6)
        axes.append(np.exp(-0.5 * (x / sigma) ** 2))
    imp = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    imp /= imp.max()
    return np.maximum(imp, 1e-3)


def _check_patch(pred, expected_shape) -> np.ndarray:
    pred = np.asarray(pred)
    if pred.shape != expected_shape:
        raise PredictorError(f"predictor returned shape {pred.shape}, expected {expected_shape}")
    if not np.isfinite(pred).all() or pred.min() < 0 or pred.max() > 1:
        raise PredictorError("predictor output outside [0, 1]")
    return pred


def _stitch(stack, predictor, grid: WindowGrid, flip: FlipSpec, jobs: int) -> np.ndarray:
    shape = stack.shape[1:]
    windows = grid.windows(shape)
    weight = gaussian_importance(grid.window) if grid.blend == "gaussian" else None
    total = np.zeros((3,) + shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.float64)

    def run(sl):
        loc = PatchLocation(sl, flip, shape)
        patch = stack[(slice(None),) + sl]
        return _check_patch(predictor(patch, loc), (3,) + tuple(grid.window))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            preds = pool.map(run, windows)
            # accumulate strictly in enumeration order regardless of completion order
            for sl, pred in zip(windows, preds):
                _accumulate(total, count, sl, pred, weight)
    else:
        for sl in windows:
            _accumulate(total, count, sl, run(sl), weight)
    total /= count
    return total


def _accumulate(total, count, sl, pred, weight):
    region = (slice(None),) + sl
    if weight is None:
        total[region] += pred
        count[sl] += 1.0
    else:
        total[region] += pred * weight
        count[sl] += weight


def _prepare(stack, grid: WindowGrid):
    stack = as_volume(stack, "input", ndim=4)
    if any(n < w for n, w in zip(stack.shape[1:], grid.window)):
        raise ValidationError(f"input spatial shape {stack.shape[1:]} smaller than window {grid.window}")
    return stack


def sliding_window_predict(stack, predictor: Predictor, grid: WindowGrid | None = None, *, jobs: int = 1) -> np.ndarray:
    """Tile ``stack`` with overlapping windows and average overlapping predictions."""
    grid = grid or WindowGrid()
    stack = _prepare(stack, grid)
    out = _stitch(stack, predictor, grid, FlipSpec(), jobs)
    return out.astype(np.float32)


def tta_predict(stack, predictor: Predictor, grid: WindowGrid | None = None, *,
                flips: Sequence[FlipSpec] = ALL_FLIPS, jobs: int = 1) -> np.ndarray:
    """Mean over flips of the un-flipped sliding-window prediction."""
    grid = grid or WindowGrid()
    stack = _prepare(stack, grid)
    acc = np.zeros((3,) + stack.shape[1:], dtype=np.float64)
    for f in flips:
        pred = _stitch(flip_view(stack, f), predictor, grid, f, jobs)
        acc += flip_view(pred, f)
    acc /= len(flips)
    return acc.astype(np.float32)


class ConstantPredictor:
    def __init__(self, p: float):
        if not 0 <= p <= 1:
            raise ValidationError(f"constant probability must be in [0, 1], got {p}")
        self.p = float(p)

    def __call__(self, patch, location=None):
        return np.full((3,) + patch.shape[1:], self.p, dtype=np.float32)


class FieldPredictor:
    """Returns the restriction of a fixed full-volume probability field.

    Under a flip the returned patch is the flipped restriction, so the
    predictor behaves like an ideally flip-equivariant model.
    """

    def __init__(self, field):
        self.field = as_prob_map(field, "field")

    def __call__(self, patch, location: PatchLocation):
        if tuple(location.volume_shape) != self.field.shape[1:]:
            raise PredictorError(
                f"field shape {self.field.shape[1:]} does not match input {location.volume_shape}"
            )
        region = self.field[(slice(None),) + location.original_slices()]
        return flip_view(region, location.flip)
