"""Array conventions shared by every stage.

Volumes are plain C-ordered numpy arrays:

* scalar volume: ``(H, W, D)`` float32 or uint8
* channel map / modality stack: ``(C, H, W, D)`` with the channel axis first
* binary mask: ``(H, W, D)`` uint8 in {0, 1}
* label map: ``(H, W, D)`` uint8 in {0, 1, 2, 3}

The helpers below validate and normalise inputs; nothing here mutates its
arguments.
"""
from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

LABEL_NCR = 1
LABEL_ED = 2
LABEL_ET = 3


class FlipSpec(NamedTuple):
    flip_h: bool = False
    flip_w: bool = False
    flip_d: bool = False

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self) if f)

    def compose(self, other: "FlipSpec") -> "FlipSpec":
        return FlipSpec(*(a != b for a, b in zip(self, other)))


ALL_FLIPS: tuple[FlipSpec, ...] = tuple(
    FlipSpec(*bits) for bits in itertools.product((False, True), repeat=3)
)


def check_finite(arr: np.ndarray, name: str = "volume") -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains NaN or Inf values")


def as_volume(arr, name: str = "volume", ndim: int = 3) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValidationError(f"{name} has an empty axis: {arr.shape}")
    check_finite(arr, name)
    return arr


def as_prob_map(arr, name: str = "probs", channels: int | None = 3) -> np.ndarray:
    """Validate a channel-first probability map with values in [0, 1]."""
    arr = as_volume(arr, name, ndim=4)
    if channels is not None and arr.shape[0] != channels:
        raise ValidationError(f"{name} must have {channels} channels, got {arr.shape[0]}")
    if arr.dtype.kind not in "fui":
        raise ValidationError(f"{name} has non-numeric dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return arr


def as_mask(arr, name: str = "mask") -> np.ndarray:
    """Return ``arr`` as a uint8 {0, 1} mask, rejecting any other values."""
    arr = np.asarray(arr)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    arr = as_volume(arr, name)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be binary")
    return arr.astype(np.uint8, copy=False)


def as_labelmap(arr, name: str = "labelmap") -> np.ndarray:
    arr = as_volume(arr, name)
    if arr.size and not np.isin(arr, (0, 1, 2, 3)).all():
        raise ValidationError(f"{name} values must be in {{0, 1, 2, 3}}")
    return arr.astype(np.uint8, copy=False)


def flip(v: np.ndarray, f: FlipSpec) -> np.ndarray:
    """Flip the three trailing spatial axes selected by ``f``.

    Works on ``(H, W, D)`` volumes and on channel-first ``(C, H, W, D)``
    stacks. Returns a contiguous copy.
    """
    v = np.asarray(v)
    if v.ndim < 3:
        raise ValidationError(f"flip needs at least 3 dims, got {v.ndim}")
    offset = v.ndim - 3
    axes = tuple(a + offset for a in f.axes)
    if not axes:
        return v.copy()
    return np.ascontiguousarray(np.flip(v, axis=axes))


def flip_view(v: np.ndarray, f: FlipSpec) -> np.ndarray:
    axes = tuple(a + v.ndim - 3 for a in f.axes)
    return np.flip(v, axis=axes) if axes else v


def regions_from_labelmap(labels: np.ndarray) -> np.ndarray:
    """Decode a label map into stacked (TC, WT, ET) binary masks."""
    labels = as_labelmap(labels)
    tc = (labels == LABEL_NCR) | (labels == LABEL_ET)
    wt = labels > 0
    et = labels == LABEL_ET
    return np.stack([tc, wt, et]).astype(np.uint8)
