"""Study-wise ("legacy") and lesion-wise Dice / HD95.

Distances are Euclidean in voxel units (1 mm isotropic). Surface voxels are
mask voxels with at least one 6-neighbour outside the mask; voxels on the
volume border count as having a background neighbour.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import CHANNELS
from .errors import ValidationError
from .postprocess import connected_components, structure
from .volume import as_mask, regions_from_labelmap, as_labelmap

METRIC_FIELDS = ("legacy_dice", "legacy_hd95", "lesion_dice", "lesion_hd95")

_FACE = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class MetricsConfig:
    connectivity: int = 26
    dilation_radius: int = 3
    fp_dice: float = 0.0
    penalty_hd95: float = 374.0
    percentile: float = 95.0

    def __post_init__(self):
        structure(self.connectivity)
        if self.dilation_radius < 0:
            raise ValidationError("dilation_radius must be >= 0")
        if not 0 <= self.percentile <= 100:
            raise ValidationError("percentile must be in [0, 100]")
        if self.penalty_hd95 < 0:
            raise ValidationError("penalty_hd95 must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown metrics config field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(a, b):
    a = as_mask(a, "a").astype(bool)
    b = as_mask(b, "b").astype(bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (sa + sb)


def surface(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_FACE, border_value=0)


def _bbox(mask: np.ndarray, pad: int = 1):
    """Bounding-box slices of ``mask`` grown by ``pad`` and clipped to the array."""
    idx = np.nonzero(mask)
    return tuple(
        slice(max(int(i.min()) - pad, 0), min(int(i.max()) + 1 + pad, n))
        for i, n in zip(idx, mask.shape)
    )


def surface_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pooled nearest surface-to-surface distances, a->b then b->a."""
    box = _bbox(a | b)
    a, b = a[box], b[box]
    sa, sb = surface(a), surface(b)
    to_b = ndimage.distance_transform_edt(~sb)
    to_a = ndimage.distance_transform_edt(~sa)
    return np.concatenate([to_b[sa], to_a[sb]])


def hd95(a, b, penalty: float = 374.0, percentile: float = 95.0) -> float:
    a, b = _pair(a, b)
    ea, eb = not a.any(), not b.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        return float(penalty)
    return float(np.percentile(surface_distances(a, b), percentile))


@dataclass
class LesionMatch:
    gt_id: int | None
    pred_ids: list[int]
    dice: float
    hd95: float

    @property
    def kind(self) -> str:
        if self.gt_id is None:
            return "fp"
        return "fn" if not self.pred_ids else "tp"


def lesion_wise_metrics(pred, gt, cfg: MetricsConfig | None = None):
    """Match components by dilated-gt overlap and score each match.

    Every gt component is scored against the union of pred components that
    touch it after dilation (a pred component may serve several gt
    components). Unmatched gt (FN) and pred (FP) components score
    ``(fp_dice, penalty_hd95)``. Returns ``(dice, hd95, matches)`` where the
    scores are means over all entries; with no entries at all the case is a
    true negative and scores (1.0, 0.0).
    """
    cfg = cfg or MetricsConfig()
    pred, gt = _pair(pred, gt)
    gcc = connected_components(gt, cfg.connectivity)
    pcc = connected_components(pred, cfg.connectivity)
    dil = structure(26)
    matches: list[LesionMatch] = []
    used: set[int] = set()

    gboxes = ndimage.find_objects(gcc.labels)
    for gid, gsl in enumerate(gboxes, start=1):
        box = tuple(
            slice(max(s.start - cfg.dilation_radius, 0), min(s.stop + cfg.dilation_radius, n))
            for s, n in zip(gsl, gt.shape)
        )
        g_local = gcc.labels[box] == gid
        grown = ndimage.binary_dilation(g_local, structure=dil, iterations=cfg.dilation_radius) \
            if cfg.dilation_radius > 0 else g_local
        hit = np.unique(pcc.labels[box][grown])
        ids = [int(i) for i in hit if i != 0]
        if not ids:
            matches.append(LesionMatch(gid, [], cfg.fp_dice, cfg.penalty_hd95))
            continue
        used.update(ids)
        g_full = gcc.labels == gid
        p_full = np.isin(pcc.labels, ids)
        region = _bbox(g_full | p_full)
        g_r, p_r = g_full[region], p_full[region]
        matches.append(LesionMatch(gid, ids, dice(g_r, p_r), hd95(g_r, p_r, cfg.penalty_hd95, cfg.percentile)))

    for pid in range(1, pcc.count + 1):
        if pid not in used:
            matches.append(LesionMatch(None, [pid], cfg.fp_dice, cfg.penalty_hd95))

    if not matches:
        return 1.0, 0.0, matches
    ld = float(np.mean([m.dice for m in matches]))
    lh = float(np.mean([m.hd95 for m in matches]))
    return ld, lh, matches


@dataclass
class ChannelMetrics:
    legacy_dice: float
    legacy_hd95: float
    lesion_dice: float
    lesion_hd95: float
    lesions: list[LesionMatch] = field(default_factory=list)

    @property
    def num_fp(self) -> int:
        return sum(m.kind == "fp" for m in self.lesions)

    @property
    def num_fn(self) -> int:
        return sum(m.kind == "fn" for m in self.lesions)


@dataclass
class CaseReport:
    case: str
    channels: dict[str, ChannelMetrics]

    @property
    def averages(self) -> dict[str, float]:
        return {
            f: float(np.mean([getattr(self.channels[c], f) for c in CHANNELS]))
            for f in METRIC_FIELDS
        }

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "channels": {
                name: {
                    **{f: getattr(cm, f) for f in METRIC_FIELDS},
                    "num_fp": cm.num_fp,
                    "num_fn": cm.num_fn,
                    "lesions": [asdict(m) for m in cm.lesions],
                }
                for name, cm in self.channels.items()
            },
            "averages": self.averages,
        }


def evaluate_masks(pred_masks, gt_masks, cfg: MetricsConfig | None = None, case: str = "") -> CaseReport:
    """Score stacked (TC, WT, ET) masks channel by channel."""
    cfg = cfg or MetricsConfig()
    channels = {}
    for c, name in enumerate(CHANNELS):
        p, g = pred_masks[c], gt_masks[c]
        ld, lh, matches = lesion_wise_metrics(p, g, cfg)
        channels[name] = ChannelMetrics(
            legacy_dice=dice(p, g),
            legacy_hd95=hd95(p, g, cfg.penalty_hd95, cfg.percentile),
            lesion_dice=ld,
            lesion_hd95=lh,
            lesions=matches,
        )
    return CaseReport(case, channels)


def evaluate_case(pred, gt, cfg: MetricsConfig | None = None, case: str = "") -> CaseReport:
    """Decode two label maps into ET/TC/WT regions and score every channel."""
    pred = as_labelmap(pred, "pred")
    gt = as_labelmap(gt, "gt")
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    return evaluate_masks(regions_from_labelmap(pred), regions_from_labelmap(gt), cfg, case)


def mean_exact(values) -> float:
    """Correctly rounded mean, independent of summation order."""
    values = list(values)
    return math.fsum(values) / len(values)


def summarize(reports: list[CaseReport]) -> dict:
    """Corpus means per channel and over channels; order-independent."""
    if not reports:
        raise ValidationError("no case reports to summarize")
    per_channel = {
        name: {f: mean_exact(getattr(r.channels[name], f) for r in reports) for f in METRIC_FIELDS}
        for name in CHANNELS
    }
    overall = {f: mean_exact(r.averages[f] for r in reports) for f in METRIC_FIELDS}
    return {"num_cases": len(reports), "channels": per_channel, "averages": overall}


def report_rows(reports: list[CaseReport]):
    """Flat (case, channel) rows for CSV output."""
    for r in reports:
        for name in CHANNELS:
            cm = r.channels[name]
            yield {
                "case": r.case,
                "channel": name,
                **{f: getattr(cm, f) for f in METRIC_FIELDS},
                "num_lesion_entries": len(cm.lesions),
                "num_fp": cm.num_fp,
                "num_fn": cm.num_fn,
            }
