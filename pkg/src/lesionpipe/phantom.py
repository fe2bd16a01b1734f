"""Deterministic synthetic tumor phantoms.

Ground truth is a union of nested ellipsoids per lesion (ET inside TC inside
WT). Probability maps put 0.9 inside each true region and 0.05 outside, add
Gaussian noise, paint false-positive blobs, and clip to [0, 1].

Noise is reproducible across platforms: channel ``c`` of a case with seed
``s`` draws from Philox4x64-10 keyed with ``(s, c)`` starting at counter 0.
Consecutive raw 64-bit words ``r0, r1`` become uniforms
``u1 = ((r0 >> 11) + 1) * 2**-53`` and ``u2 = (r1 >> 11) * 2**-53`` and the
Box-Muller pair ``sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2)``, filled in C
order.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import CHANNELS
from .errors import ValidationError
from .postprocess import channels_to_labelmap
from .volume import regions_from_labelmap

P_INSIDE = 0.9
P_OUTSIDE = 0.05


def _radii(r) -> tuple[float, float, float]:
    if isinstance(r, (int, float)):
        return (float(r),) * 3
    r = tuple(float(x) for x in r)
    if len(r) != 3:
        raise ValidationError(f"radii must be a number or a 3-list, got {r}")
    return r


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float, float]
    r_wt: tuple[float, float, float]
    r_tc: tuple[float, float, float]
    r_et: tuple[float, float, float]

    @classmethod
    def from_dict(cls, d: dict) -> "Lesion":
        return cls(
            tuple(float(x) for x in d["center"]),
            _radii(d["r_wt"]),
            _radii(d["r_tc"]),
            _radii(d["r_et"]),
        )


@dataclass(frozen=True)
class FPBlob:
    center: tuple[float, float, float]
    radius: float
    mean_prob: float
    channel: str = "ET"

    @classmethod
    def from_dict(cls, d: dict) -> "FPBlob":
        return cls(tuple(float(x) for x in d["center"]), float(d["radius"]),
                   float(d["mean_prob"]), str(d.get("channel", "ET")).upper())


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    shape: tuple[int, int, int]
    lesions: tuple[Lesion, ...] = ()
    noise_sigma: float = 0.0
    fp_blobs: tuple[FPBlob, ...] = ()
    name: str = ""

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValidationError(f"shape must be three positive ints, got {self.shape}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be in [0, 2**64)")
        for i, les in enumerate(self.lesions):
            for a, (w, t, e) in enumerate(zip(les.r_wt, les.r_tc, les.r_et)):
                if not w >= t >= e >= 0:
                    raise ValidationError(f"lesions[{i}] radii must satisfy r_wt >= r_tc >= r_et >= 0 (axis {a})")
            _check_inside(les.center, les.r_wt, self.shape, f"lesions[{i}]")
        for i, b in enumerate(self.fp_blobs):
            if b.channel not in CHANNELS:
                raise ValidationError(f"fp_blobs[{i}].channel must be one of {CHANNELS}")
            if not 0 <= b.mean_prob <= 1:
                raise ValidationError(f"fp_blobs[{i}].mean_prob must be in [0, 1]")
            if b.radius < 0:
                raise ValidationError(f"fp_blobs[{i}].radius must be >= 0")
            _check_inside(b.center, (b.radius,) * 3, self.shape, f"fp_blobs[{i}]")

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        try:
            return cls(
                seed=int(d["seed"]),
                shape=tuple(int(x) for x in d["shape"]),
                lesions=tuple(Lesion.from_dict(x) for x in d.get("lesions", [])),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                fp_blobs=tuple(FPBlob.from_dict(x) for x in d.get("fp_blobs", [])),
                name=str(d.get("name", "")),
            )
        except KeyError as exc:
            raise ValidationError(f"phantom spec missing field {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def _check_inside(center, radii, shape, what):
    for c, r, n in zip(center, radii, shape):
        if c - r < 0 or c + r > n - 1:
            raise ValidationError(f"{what} extends outside the volume {shape}")


def load_specs(data) -> list[PhantomSpec]:
    """Accept one spec object or ``{"cases": [...]}``."""
    if isinstance(data, (str, bytes)):
        data = json.loads(data)
    if isinstance(data, dict) and "cases" in data:
        return [PhantomSpec.from_dict(c) for c in data["cases"]]
    if isinstance(data, dict):
        return [PhantomSpec.from_dict(data)]
    raise ValidationError("phantom spec must be an object or {'cases': [...]}")


def _grid(shape):
    return np.ogrid[tuple(slice(0, n) for n in shape)]


def ellipsoid(shape, center, radii) -> np.ndarray:
    """Voxels with sum(((x - c) / r)^2) <= 1; any zero radius gives an empty set."""
    if min(radii) <= 0:
        return np.zeros(shape, dtype=bool)
    g = _grid(shape)
    with np.errstate(over="ignore"):  # tiny radii overflow to inf, i.e. outside
        q = sum(((x - c) / r) ** 2 for x, c, r in zip(g, center, radii))
    return q <= 1.0


def region_masks(spec: PhantomSpec) -> np.ndarray:
    """Union of each region's ellipsoids as stacked (TC, WT, ET) masks."""
    masks = np.zeros((3,) + tuple(spec.shape), dtype=bool)
    for les in spec.lesions:
        masks[0] |= ellipsoid(spec.shape, les.center, les.r_tc)
        masks[1] |= ellipsoid(spec.shape, les.center, les.r_wt)
        masks[2] |= ellipsoid(spec.shape, les.center, les.r_et)
    return masks


def generate_ground_truth(spec: PhantomSpec) -> np.ndarray:
    return channels_to_labelmap(region_masks(spec))


def philox_normal(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` standard normals from the documented Philox / Box-Muller recipe."""
    bitgen = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    pairs = (n + 1) // 2
    raw = bitgen.random_raw(2 * pairs).reshape(pairs, 2)
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    rad = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty((pairs, 2), dtype=np.float64)
    out[:, 0] = rad * np.cos(theta)
    out[:, 1] = rad * np.sin(theta)
    return out.ravel()[:n]


def generate_prob_map(spec: PhantomSpec, gt: np.ndarray | None = None) -> np.ndarray:
    if gt is None:
        gt = generate_ground_truth(spec)
    if tuple(gt.shape) != tuple(spec.shape):
        raise ValidationError(f"gt shape {gt.shape} does not match spec shape {spec.shape}")
    regions = regions_from_labelmap(gt).astype(bool)
    n = int(np.prod(spec.shape))
    out = np.empty((3,) + tuple(spec.shape), dtype=np.float32)
    for c, name in enumerate(CHANNELS):
        base = np.where(regions[c], P_INSIDE, P_OUTSIDE)
        for blob in spec.fp_blobs:
            if blob.channel == name:
                base[ellipsoid(spec.shape, blob.center, (blob.radius,) * 3)] = blob.mean_prob
        if spec.noise_sigma > 0:
            base = base + spec.noise_sigma * philox_normal(spec.seed, c, n).reshape(spec.shape)
        out[c] = np.clip(base, 0.0, 1.0)
    return out


def generate_image(spec: PhantomSpec, gt: np.ndarray | None = None) -> np.ndarray:
    """Trivial 4-modality intensity stack: a head ellipsoid with label-dependent contrast."""
    if gt is None:
        gt = generate_ground_truth(spec)
    shape = tuple(spec.shape)
    center = tuple((n - 1) / 2 for n in shape)
    head = ellipsoid(shape, center, tuple(0.48 * n for n in shape))
    head |= gt > 0
    out = np.zeros((4,) + shape, dtype=np.float32)
    for m in range(4):
        vol = np.where(head, 100.0 * (m + 1), 0.0) + 40.0 * (m + 1) * gt
        out[m] = vol.astype(np.float32)
    return out


@dataclass
class PhantomCase:
    spec: PhantomSpec
    gt: np.ndarray
    probs: np.ndarray
    image: np.ndarray | None = field(default=None, repr=False)


def generate_case(spec: PhantomSpec, with_image: bool = False) -> PhantomCase:
    gt = generate_ground_truth(spec)
    probs = generate_prob_map(spec, gt)
    image = generate_image(spec, gt) if with_image else None
    return PhantomCase(spec, gt, probs, image)
