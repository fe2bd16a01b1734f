"""Thresholding, connected-component filtering and label recomposition."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import CHANNELS
from .errors import ValidationError
from .volume import LABEL_ED, LABEL_ET, LABEL_NCR, as_mask, as_prob_map, as_volume

log = logging.getLogger(__name__)

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def structure(connectivity: int) -> np.ndarray:
    try:
        return _STRUCTURES[connectivity]
    except KeyError:
        raise ValidationError(f"connectivity must be 6 or 26, got {connectivity}") from None


@dataclass(frozen=True)
class ThresholdConfig:
    t_tc: float = 0.5
    t_wt: float = 0.5
    t_et: float = 0.4

    def __post_init__(self):
        for name in ("t_tc", "t_wt", "t_et"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 < v < 1):
                raise ValidationError(f"thresholds.{name} must be in (0, 1), got {v}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.t_tc, self.t_wt, self.t_et)


@dataclass(frozen=True)
class FilterConfig:
    t_s_upper: int
    t_s_lower: int
    t_p_upper: float
    t_p_mid: float

    def __post_init__(self):
        if self.t_s_lower < 0:
            raise ValidationError(f"t_s_lower must be >= 0, got {self.t_s_lower}")
        if self.t_s_upper < self.t_s_lower:
            raise ValidationError(
                f"t_s_upper ({self.t_s_upper}) must be >= t_s_lower ({self.t_s_lower})"
            )
        for name in ("t_p_upper", "t_p_mid"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValidationError(f"{name} must be in [0, 1), got {v}")


@dataclass(frozen=True)
class PostprocessConfig:
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    # keyed by lowercase channel name; None disables filtering for that channel
    filters: dict = field(default_factory=lambda: dict(DEFAULT_FILTERS))
    et_to_tc_min_voxels: int = 70
    connectivity: int = 26

    def __post_init__(self):
        if set(self.filters) != {"tc", "wt", "et"}:
            raise ValidationError(f"filters must have keys tc, wt, et; got {sorted(self.filters)}")
        for k, v in self.filters.items():
            if v is not None and not isinstance(v, FilterConfig):
                raise ValidationError(f"filters.{k} must be a FilterConfig or null")
        if self.et_to_tc_min_voxels < 0:
            raise ValidationError("et_to_tc_min_voxels must be >= 0")
        structure(self.connectivity)

    def to_dict(self) -> dict:
        return {
            "thresholds": asdict(self.thresholds),
            "filters": {k: (asdict(v) if v is not None else None) for k, v in self.filters.items()},
            "et_to_tc_min_voxels": self.et_to_tc_min_voxels,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PostprocessConfig":
        if not isinstance(d, dict):
            raise ValidationError("postprocess config must be a JSON object")
        unknown = set(d) - {"thresholds", "filters", "et_to_tc_min_voxels", "connectivity"}
        if unknown:
            raise ValidationError(f"unknown postprocess config field(s): {sorted(unknown)}")
        thresholds = ThresholdConfig(**_checked(d.get("thresholds", {}), ThresholdConfig, "thresholds"))
        filters = dict(DEFAULT_FILTERS)
        for key, val in d.get("filters", {}).items():
            if key not in filters:
                raise ValidationError(f"unknown filter channel {key!r}")
            if val is None:
                filters[key] = None
            else:
                kw = _checked(val, FilterConfig, f"filters.{key}")
                try:
                    filters[key] = FilterConfig(**kw)
                except TypeError as exc:
                    raise ValidationError(f"filters.{key}: {exc}") from None
                except ValidationError as exc:
                    raise ValidationError(f"filters.{key}.{exc}") from None
        return cls(
            thresholds=thresholds,
            filters=filters,
            et_to_tc_min_voxels=int(d.get("et_to_tc_min_voxels", 70)),
            connectivity=int(d.get("connectivity", 26)),
        )


def _checked(d, cls, prefix: str) -> dict:
    if not isinstance(d, dict):
        raise ValidationError(f"{prefix} must be a JSON object")
    allowed = set(cls.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"unknown field(s) in {prefix}: {sorted(unknown)}")
    return d


DEFAULT_FILTERS = {
    "tc": FilterConfig(350, 350, 0.0, 0.0),
    "wt": FilterConfig(2000, 100, 0.85, 0.925),
    "et": FilterConfig(95, 70, 0.71, 0.5),
}


class ComponentField(NamedTuple):
    labels: np.ndarray  # int32, 0 = background, 1..count
    count: int

    def sizes(self) -> np.ndarray:
        """Voxel count per component id; index 0 is background."""
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)


def as_discrete(probs, cfg: ThresholdConfig) -> np.ndarray:
    """Per-channel ``prob >= threshold``; returns stacked (TC, WT, ET) uint8 masks."""
    probs = as_prob_map(probs)
    t = np.asarray(cfg.as_tuple(), dtype=np.float64)[:, None, None, None]
    return (probs >= t).astype(np.uint8)


def connected_components(mask, connectivity: int = 26) -> ComponentField:
    """Label maximal connected groups, numbered by their first voxel in C order."""
    mask = as_mask(mask)
    labels, n = ndimage.label(mask, structure=structure(connectivity))
    return ComponentField(labels.astype(np.int32, copy=False), int(n))


def component_stats(prob, cc: ComponentField) -> tuple[np.ndarray, np.ndarray]:
    """Sizes and mean probabilities per component (index 0 is background)."""
    flat = cc.labels.ravel()
    sizes = np.bincount(flat, minlength=cc.count + 1)
    sums = np.bincount(flat, weights=np.asarray(prob, dtype=np.float64).ravel(), minlength=cc.count + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(sizes > 0, sums / np.maximum(sizes, 1), 0.0)
    return sizes, means


def filter_objects(prob, mask, cfg: FilterConfig, connectivity: int = 26) -> np.ndarray:
    """Keep components by size tier and mean probability.

    size >= t_s_upper          -> keep iff mean >= t_p_upper
    t_s_lower <= size < upper  -> keep iff mean >= t_p_mid
    size < t_s_lower           -> drop
    """
    prob = as_volume(prob, "prob")
    mask = as_mask(mask)
    if prob.shape != mask.shape:
        raise ValidationError(f"prob shape {prob.shape} != mask shape {mask.shape}")
    cc = connected_components(mask, connectivity)
    if cc.count == 0:
        return np.zeros_like(mask)
    sizes, means = component_stats(prob, cc)
    large = sizes >= cfg.t_s_upper
    mid = (sizes >= cfg.t_s_lower) & ~large
    keep = (large & (means >= cfg.t_p_upper)) | (mid & (means >= cfg.t_p_mid))
    keep[0] = False
    return keep[cc.labels].astype(np.uint8)


def et_to_tc_replacement(masks, min_et_voxels: int) -> np.ndarray:
    """Fold a small total ET prediction into TC and clear ET."""
    masks = np.asarray(masks)
    if masks.ndim != 4 or masks.shape[0] != 3:
        raise ValidationError(f"expected stacked (TC, WT, ET) masks, got shape {masks.shape}")
    et_count = int(masks[2].sum())
    out = masks.astype(np.uint8, copy=True)
    if 0 < et_count < min_et_voxels:
        out[0] |= out[2]
        out[2] = 0
    return out


def channels_to_labelmap(masks) -> np.ndarray:
    """Priority decode: ET -> 3, else TC -> 1 (NCR), else WT -> 2 (ED), else 0."""
    masks = np.asarray(masks).astype(bool)
    if masks.ndim != 4 or masks.shape[0] != 3:
        raise ValidationError(f"expected stacked (TC, WT, ET) masks, got shape {masks.shape}")
    tc, wt, et = masks
    if (et & ~tc).any() or (tc & ~wt).any():
        log.info("channel masks are not nested (ET within TC within WT); decoding by priority")
    out = np.zeros(tc.shape, dtype=np.uint8)
    out[wt] = LABEL_ED
    out[tc] = LABEL_NCR
    out[et] = LABEL_ET
    return out


def filter_channels(probs, masks, cfg: PostprocessConfig) -> np.ndarray:
    out = np.empty_like(masks)
    for c, name in enumerate(CHANNELS):
        fc = cfg.filters[name.lower()]
        out[c] = masks[c] if fc is None else filter_objects(probs[c], masks[c], fc, cfg.connectivity)
    return out


def postprocess_pipeline(probs, cfg: PostprocessConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Threshold, filter each channel, fold small ET into TC, decode labels."""
    cfg = cfg or PostprocessConfig()
    probs = as_prob_map(probs)
    masks = as_discrete(probs, cfg.thresholds)
    masks = filter_channels(probs, masks, cfg)
    masks = et_to_tc_replacement(masks, cfg.et_to_tc_min_voxels)
    return masks, channels_to_labelmap(masks)
