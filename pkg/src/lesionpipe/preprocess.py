"""Foreground cropping, non-zero normalisation and modality stacking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyForegroundError, ValidationError
from .volume import as_volume

STD_EPS = 1e-8


@dataclass(frozen=True)
class CropBox:
    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ValidationError("CropBox corners must be 3-tuples")
        if any(a < 0 or a >= b for a, b in zip(self.lo, self.hi)):
            raise ValidationError(f"CropBox requires 0 <= lo < hi, got {self.lo}, {self.hi}")

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "CropBox":
        return cls(tuple(int(x) for x in d["lo"]), tuple(int(x) for x in d["hi"]))


def foreground_box(stack: np.ndarray) -> CropBox:
    """Tight bounding box of voxels that are non-zero in any channel."""
    any_nz = np.any(stack != 0, axis=0)
    if not any_nz.any():
        raise EmptyForegroundError("no non-zero voxels in any modality")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(any_nz.any(axis=other))
        lo.append(int(idx[0]))
        hi.append(int(idx[-1]) + 1)
    return CropBox(tuple(lo), tuple(hi))


def crop_foreground(modalities) -> tuple[np.ndarray, CropBox]:
    """Stack modalities channel-first and crop to their shared foreground box."""
    vols = [as_volume(m, f"modality[{i}]") for i, m in enumerate(modalities)]
    if not vols:
        raise ValidationError("at least one modality is required")
    if len({v.shape for v in vols}) != 1:
        raise ValidationError(f"modalities differ in shape: {[v.shape for v in vols]}")
    stack = np.stack(vols)
    box = foreground_box(stack)
    return np.ascontiguousarray(stack[(slice(None),) + box.slices]), box


def normalize_nonzero(v: np.ndarray) -> np.ndarray:
    """Z-score voxels that are non-zero; leave zeros untouched.

    Statistics are the population mean/std over the non-zero set. When the
    std is below ``STD_EPS`` only the mean is subtracted.
    """
    v = as_volume(v)
    if v.dtype.kind != "f":
        raise ValidationError(f"normalize_nonzero needs float input, got {v.dtype}")
    out = np.zeros(v.shape, dtype=np.float64)
    sel = v != 0
    if sel.any():
        vals = v[sel].astype(np.float64)
        mean = vals.mean()
        std = vals.std()
        centered = vals - mean
        out[sel] = centered / std if std >= STD_EPS else centered
    return out.astype(v.dtype)


def preprocess_case(modalities) -> tuple[np.ndarray, CropBox, tuple[int, int, int]]:
    """Crop, then normalise each modality independently; returns float32 stack."""
    cropped, box = crop_foreground(modalities)
    original_shape = tuple(int(s) for s in np.asarray(modalities[0]).shape)
    cropped = cropped.astype(np.float32, copy=False)
    out = np.stack([normalize_nonzero(c) for c in cropped]).astype(np.float32)
    return out, box, original_shape


def uncrop(arr: np.ndarray, box: CropBox, original_shape) -> np.ndarray:
    """Place a cropped volume (or channel-first stack) back on the original grid."""
    arr = np.asarray(arr)
    original_shape = tuple(int(s) for s in original_shape)
    if len(original_shape) != 3:
        raise ValidationError("original_shape must be 3-D")
    if any(h > s for h, s in zip(box.hi, original_shape)):
        raise ValidationError(f"box {box} exceeds original shape {original_shape}")
    if arr.shape[-3:] != box.shape:
        raise ValidationError(f"array shape {arr.shape[-3:]} does not match box extent {box.shape}")
    lead = arr.shape[:-3]
    out = np.zeros(lead + original_shape, dtype=arr.dtype)
    out[(Ellipsis,) + box.slices] = arr
    return out
