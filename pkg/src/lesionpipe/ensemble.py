"""Per-channel weighted averaging of several models' probability maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .volume import as_prob_map


@dataclass(frozen=True)
class ModelWeight:
    name: str
    tc: float
    wt: float
    et: float

    def __post_init__(self):
        for field in ("tc", "wt", "et"):
            v = getattr(self, field)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"weight {self.name}.{field} must be a non-negative finite number, got {v}")

    @property
    def vector(self) -> tuple[float, float, float]:
        return (self.tc, self.wt, self.et)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelWeight":
        try:
            return cls(str(d.get("name", "")), float(d["tc"]), float(d["wt"]), float(d["et"]))
        except KeyError as exc:
            raise ValidationError(f"weight entry missing field {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "tc": self.tc, "wt": self.wt, "et": self.et}


def parse_weights(entries) -> list[ModelWeight]:
    if not isinstance(entries, list):
        raise ValidationError("weights must be a JSON list of {name, tc, wt, et}")
    return [ModelWeight.from_dict(e) for e in entries]


def ensemble(maps: Sequence[np.ndarray], weights, out_dtype=np.float32) -> np.ndarray:
    """Weighted per-channel mean: accumulate ``w * map`` and ``w``, then divide.

    ``weights`` is a sequence of :class:`ModelWeight` or an ``(N, 3)`` array in
    (TC, WT, ET) order. Accumulation is in float64.
    """
    if len(maps) == 0:
        raise ValidationError("ensemble needs at least one probability map")
    w = np.asarray([m.vector if isinstance(m, ModelWeight) else m for m in weights], dtype=np.float64)
    if w.shape != (len(maps), 3):
        raise ValidationError(f"expected {len(maps)} weight triples, got array of shape {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValidationError("weights must be non-negative and finite")
    maps = [as_prob_map(m, f"probs[{i}]") for i, m in enumerate(maps)]
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise ValidationError(f"probs[{i}] shape {m.shape} differs from {shape}")

    y = np.zeros(shape, dtype=np.float64)
    sum_w = np.zeros(3, dtype=np.float64)
    for m, wn in zip(maps, w):
        for c in range(3):
            if wn[c] != 0:
                y[c] += m[c] * wn[c]
        sum_w += wn
    if (sum_w <= 0).any():
        bad = [name for name, s in zip(("tc", "wt", "et"), sum_w) if s <= 0]
        raise ValidationError(f"weights sum to zero for channel(s): {', '.join(bad)}")
    y /= sum_w[:, None, None, None]
    return y.astype(out_dtype, copy=False)
