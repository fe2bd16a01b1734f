"""Regenerate src/lesionpipe/data/ablation_corpus.json.

50 phantom cases, each with 1-2 nested lesions sized to clear every size
gate of the shipped filter config, and 2-5 small low-confidence false
positive blobs (< 70 voxels, mean probability < 0.5) placed well away from
the lesions.
"""
import argparse
import json

import numpy as np

from lesionpipe.phantom import PhantomSpec, generate_ground_truth, ellipsoid
from lesionpipe.volume import regions_from_labelmap

SHAPE = (80, 80, 72)
MARGIN = 8  # clearance beyond the dilation radius used for lesion matching


def _lesion(rng):
    r_wt = rng.uniform(10.0, 12.5) * rng.uniform(0.92, 1.08, size=3)
    r_tc = r_wt * rng.uniform(0.62, 0.7)
    r_et = r_tc * rng.uniform(0.72, 0.82)
    return r_wt, r_tc, r_et


def _sample_case(rng, index, seed):
    lesions = []
    n_lesions = int(rng.integers(1, 3))
    while len(lesions) < n_lesions:
        r_wt, r_tc, r_et = _lesion(rng)
        lo = np.ceil(r_wt) + 1
        hi = np.array(SHAPE) - 2 - np.ceil(r_wt)
        center = rng.uniform(lo, hi)
        if all(np.linalg.norm(center - np.array(l["center"])) > r_wt.max() + max(l["r_wt"]) + MARGIN
               for l in lesions):
            lesions.append({"center": center.round(2).tolist(), "r_wt": r_wt.round(2).tolist(),
                            "r_tc": r_tc.round(2).tolist(), "r_et": r_et.round(2).tolist()})
    blobs = []
    n_blobs = int(rng.integers(2, 6))
    while len(blobs) < n_blobs:
        radius = float(rng.uniform(1.5, 2.3))
        center = rng.uniform(radius + 1, np.array(SHAPE) - 2 - radius)
        clear_lesions = all(np.linalg.norm(center - np.array(l["center"])) > max(l["r_wt"]) + radius + MARGIN
                            for l in lesions)
        clear_blobs = all(np.linalg.norm(center - np.array(b["center"])) > b["radius"] + radius + MARGIN
                          for b in blobs)
        if clear_lesions and clear_blobs:
            channel = str(rng.choice(["ET", "ET", "ET", "TC", "WT"]))
            blobs.append({"center": center.round(2).tolist(), "radius": round(radius, 2),
                          "mean_prob": round(float(rng.uniform(0.42, 0.48)), 3), "channel": channel})
    return {"name": f"ablation_{index:02d}", "seed": seed, "shape": list(SHAPE),
            "noise_sigma": 0.05, "lesions": lesions, "fp_blobs": blobs}


def _check(case):
    spec = PhantomSpec.from_dict(case)
    regions = regions_from_labelmap(generate_ground_truth(spec))
    for les in spec.lesions:
        sizes = [int((ellipsoid(spec.shape, les.center, r)).sum()) for r in (les.r_tc, les.r_wt, les.r_et)]
        assert sizes[0] >= 1.3 * 350 and sizes[1] >= 1.3 * 2000 and sizes[2] >= 1.3 * 95, sizes
    for b in spec.fp_blobs:
        n = int(ellipsoid(spec.shape, b.center, (b.radius,) * 3).sum())
        assert 0 < n < 70 and b.mean_prob < 0.5
    return regions


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2023)
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--out", default="src/lesionpipe/data/ablation_corpus.json")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    cases = [_sample_case(rng, i, args.seed * 1000 + i) for i in range(args.cases)]
    for c in cases:
        _check(c)
    with open(args.out, "w") as fh:
        json.dump({"description": "FilterObjects ablation corpus", "cases": cases}, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
