"""Acceptance criteria. Each test prints one PASS/FAIL line and the terminal
summary repeats them in criterion order."""
import json
import time
from collections import Counter, defaultdict

import numpy as np
import pytest
from scipy import ndimage

from helpers import ball, criterion, output_digests, phantom_spec, run_chain
from lesionpipe.cli import default_config_path, run
from lesionpipe.ensemble import ModelWeight, ensemble
from lesionpipe.metrics import MetricsConfig, evaluate_case, hd95, lesion_wise_metrics
from lesionpipe.phantom import generate_case, load_specs
from lesionpipe.postprocess import (
    DEFAULT_FILTERS,
    FilterConfig,
    PostprocessConfig,
    ThresholdConfig,
    as_discrete,
    connected_components,
    filter_objects,
    postprocess_pipeline,
)
from lesionpipe.window import FieldPredictor, WindowGrid, sliding_window_predict, tta_predict, window_starts
from oracles import bfs_components, brute_hd95, enumerate_starts, naive_as_discrete, naive_filter_objects

pytestmark = pytest.mark.acceptance


def _random_configs(rng, n):
    out = [(ThresholdConfig(), DEFAULT_FILTERS[k]) for k in ("tc", "wt", "et")]
    while len(out) < n:
        lo = int(rng.integers(1, 60))
        hi = int(rng.integers(lo, 250))
        thr = ThresholdConfig(*(float(v) for v in rng.uniform(0.05, 0.95, 3)))
        out.append((thr, FilterConfig(hi, lo, float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))))
    return out


def _smooth_probs(rng, shape, channels=3):
    x = ndimage.gaussian_filter(rng.random((channels, *shape)), sigma=(0, 1.2, 1.2, 1.2))
    x = (x - x.min()) / (x.max() - x.min())
    return x.astype(np.float32)


def test_criterion_1_algorithm_conformance():
    with criterion(1, "threshold + size/probability filter match the naive algorithms voxel-exactly") as c:
        rng = np.random.default_rng(1)
        configs = _random_configs(rng, 20)
        pairs = []
        for _ in range(200):
            probs = _smooth_probs(rng, (12, 12, 12))
            masks = (_smooth_probs(rng, (12, 12, 12)) > rng.uniform(0.35, 0.65)).astype(np.uint8)
            comps = [bfs_components(m, 26) for m in masks]
            pairs.append((probs, masks, comps))
        elapsed = 0.0
        mismatches = 0
        for probs, masks, comps in pairs:
            for thr, filt in configs:
                t0 = time.perf_counter()
                got_d = as_discrete(probs, thr)
                got_f = [filter_objects(probs[ch], masks[ch], filt) for ch in range(3)]
                elapsed += time.perf_counter() - t0
                want_d = naive_as_discrete(probs, thr.t_tc, thr.t_wt, thr.t_et)
                mismatches += not np.array_equal(got_d, want_d)
                for ch in range(3):
                    want = naive_filter_objects(probs[ch], masks[ch], filt.t_s_upper, filt.t_s_lower,
                                                filt.t_p_upper, filt.t_p_mid, comps=comps[ch])
                    mismatches += not np.array_equal(got_f[ch], want)
        c.note(f"{len(pairs)} pairs x {len(configs)} configs, {mismatches} mismatches, {elapsed:.2f}s")
        assert mismatches == 0
        assert elapsed < 10


def test_criterion_2_connected_components():
    with criterion(2, "component sets equal a flood-fill oracle (6 and 26)") as c:
        rng = np.random.default_rng(2)
        elapsed, bad, count = 0.0, 0, 0
        for _ in range(1000):
            shape = tuple(int(v) for v in rng.integers(1, 17, 3))
            mask = (rng.random(shape) < rng.uniform(0.05, 0.6)).astype(np.uint8)
            for conn in (6, 26):
                t0 = time.perf_counter()
                field = connected_components(mask, conn)
                elapsed += time.perf_counter() - t0
                got = [sorted(zip(*(a.tolist() for a in np.nonzero(field.labels == i))))
                       for i in range(1, field.count + 1)]
                want = bfs_components(mask, conn)
                bad += got != want
                count += 1
        c.note(f"{count} labelings, {bad} disagreements, {elapsed:.2f}s in labeling")
        assert bad == 0
        assert elapsed < 30


def _blobby(rng, shape):
    m = np.zeros(shape, np.uint8)
    for _ in range(int(rng.integers(1, 4))):
        center = [rng.uniform(0, n - 1) for n in shape]
        m |= ball(shape, center, rng.uniform(1, max(shape) / 3))
    if rng.random() < 0.3:
        m |= (rng.random(shape) < 0.05).astype(np.uint8)
    return m


def test_criterion_3_hd95():
    with criterion(3, "HD95 equals the all-pairs surface oracle; exact penalties") as c:
        rng = np.random.default_rng(3)
        worst, n = 0.0, 0
        while n < 200:
            shape = tuple(int(v) for v in rng.integers(4, 21, 3))
            a, b = _blobby(rng, shape), _blobby(rng, shape)
            if not a.any() or not b.any():
                continue
            worst = max(worst, abs(hd95(a, b) - brute_hd95(a, b)))
            n += 1
        empty, full = np.zeros((10, 10, 10), np.uint8), ball((10, 10, 10), (5, 5, 5), 3)
        penalties = (hd95(empty, full), hd95(full, empty), hd95(empty, empty))
        c.note(f"max |delta| {worst:.3g} over {n} pairs; penalties {penalties}")
        assert worst <= 1e-9
        assert penalties == (374.0, 374.0, 0.0)


def test_criterion_4_lesion_wise_penalty():
    with criterion(4, "perfect lesion + far FP blob -> lesion dice 0.5, hd95 187.0") as c:
        shape = (64, 64, 64)
        gt = ball(shape, (18, 18, 18), 6)
        pred = gt | ball(shape, (50, 50, 50), 3)
        d, h, matches = lesion_wise_metrics(pred, gt, MetricsConfig())
        c.note(f"dice {d!r}, hd95 {h!r}, matches {[m.kind for m in matches]}")
        assert d == 0.5
        assert h == 187.0
        # and through the per-case evaluation on one channel
        seg = np.where(pred.astype(bool), 3, 0).astype(np.uint8)
        gseg = np.where(gt.astype(bool), 3, 0).astype(np.uint8)
        et = evaluate_case(seg, gseg).channels["ET"]
        assert (et.lesion_dice, et.lesion_hd95) == (0.5, 187.0)


def test_criterion_5_stitching_identity():
    with criterion(5, "sliding window reproduces a 240x240x155 field; starts {0,64,112} and {0,27}") as c:
        shape = (240, 240, 155)
        rng = np.random.default_rng(5)
        field = rng.random((3, *shape), dtype=np.float32)
        grid = WindowGrid((128, 128, 128), 0.5)
        out = sliding_window_predict(np.zeros((1, *shape), np.float32), FieldPredictor(field), grid)
        err = float(np.abs(out.astype(np.float64) - field).max())
        got = (window_starts(240, 128, 0.5), window_starts(155, 128, 0.5))
        oracle = (enumerate_starts(240, 128, 64), enumerate_starts(155, 128, 64))
        c.note(f"max abs error {err:.3g}; starts {got}")
        assert err <= 1e-6
        assert got == oracle == ([0, 64, 112], [0, 27])


class EquivariantCounter:
    """Pointwise (hence flip-equivariant) mock that records every call."""

    def __init__(self):
        self.calls = defaultdict(list)

    def __call__(self, patch, location):
        key = tuple((sl.start, sl.stop) for sl in location.original_slices())
        self.calls[key].append(location.flip.axes)
        x = patch.astype(np.float64)
        return np.stack([1 / (1 + np.exp(-x[0])), 1 / (1 + np.exp(-x[0] - x[1])), np.tanh(x[1]) ** 2])


def test_criterion_6_tta_equivariance():
    with criterion(6, "TTA with an equivariant predictor equals plain inference; 8 passes per window") as c:
        rng = np.random.default_rng(6)
        case = rng.normal(size=(2, 8, 8, 8)).astype(np.float32)
        grid = WindowGrid((4, 4, 4), 0.5)
        plain = sliding_window_predict(case, EquivariantCounter(), grid)
        counter = EquivariantCounter()
        aug = tta_predict(case, counter, grid)
        err = float(np.abs(aug.astype(np.float64) - plain).max())
        per_window = Counter(len(v) for v in counter.calls.values())
        distinct = all(len(set(v)) == 8 for v in counter.calls.values())
        c.note(f"max abs diff {err:.3g}; {len(counter.calls)} windows, passes per window {dict(per_window)}")
        assert err <= 1e-6
        assert len(counter.calls) == len(grid.windows((8, 8, 8))) == 27
        assert per_window == Counter({8: 27}) and distinct


def test_criterion_7_ensemble_weighting():
    with criterion(7, "weights (0,1,1)/(0,1,0)/(1,0,0): TC = model 2, WT = mean(1,2), ET = mean(1,3)") as c:
        rng = np.random.default_rng(7)
        maps = [rng.random((3, 6, 6, 6)) for _ in range(3)]
        weights = [ModelWeight("model1", 0, 1, 1), ModelWeight("model2", 0, 1, 0), ModelWeight("model3", 1, 0, 0)]
        out = ensemble(maps, weights, out_dtype=np.float64)
        m1, m2, m3 = maps
        errs = {
            "TC vs model2": float(np.abs(out[0] - m2[0]).max()),
            "WT vs mean(1,2)": float(np.abs(out[1] - (m1[1] + m2[1]) / 2).max()),
            "ET vs mean(1,3)": float(np.abs(out[2] - (m1[2] + m3[2]) / 2).max()),
        }
        c.note(", ".join(f"{k} {v:.3g}" for k, v in errs.items()))
        assert all(v <= 1e-12 for v in errs.values()), "stated expectation differs from per-channel weighted mean"


def _lesions_by_gt(report):
    return {(ch, m.gt_id): m.kind for ch, cm in report.channels.items() for m in cm.lesions if m.gt_id is not None}


def test_criterion_8_ablation_direction():
    with criterion(8, "filtering: lesion dice +>=0.05, legacy dice change <0.02, no true lesion lost") as c:
        t0 = time.perf_counter()
        specs = load_specs(json.loads(default_config_path("ablation_corpus.json").read_text()))
        full = PostprocessConfig()
        base = PostprocessConfig(filters={"tc": None, "wt": None, "et": None})
        lesion = {"base": [], "full": []}
        legacy = {"base": [], "full": []}
        lost, blobs = 0, []
        for spec in specs:
            case = generate_case(spec)
            blobs.append(len(spec.fp_blobs))
            reports = {}
            for key, cfg in (("base", base), ("full", full)):
                _, seg = postprocess_pipeline(case.probs, cfg)
                r = evaluate_case(seg, case.gt)
                reports[key] = r
                lesion[key].append(r.averages["lesion_dice"])
                legacy[key].append(r.averages["legacy_dice"])
            before, after = _lesions_by_gt(reports["base"]), _lesions_by_gt(reports["full"])
            lost += sum(1 for k, v in before.items() if v == "tp" and after.get(k) != "tp")
        elapsed = time.perf_counter() - t0
        d_lesion = float(np.mean(lesion["full"]) - np.mean(lesion["base"]))
        d_legacy = float(np.mean(legacy["full"]) - np.mean(legacy["base"]))
        c.note(f"{len(specs)} cases; lesion dice {np.mean(lesion['base']):.4f} -> {np.mean(lesion['full']):.4f}; "
               f"legacy change {d_legacy:+.4f}; lost {lost}; {elapsed:.1f}s")
        assert len(specs) == 50 and min(blobs) >= 2 and max(blobs) <= 5
        assert d_lesion >= 0.05
        assert abs(d_legacy) < 0.02
        assert lost == 0
        assert elapsed < 120


@pytest.mark.slow
def test_criterion_9_end_to_end_determinism(tmp_path):
    with criterion(9, "full 240x240x155 chain < 30 s, bitwise identical across runs and --jobs 1/8") as c:
        spec = phantom_spec((240, 240, 155), seed=9)
        t0 = time.perf_counter()
        first = run_chain(run, tmp_path / "run1", spec, jobs=1, window=128)
        elapsed = time.perf_counter() - t0
        second = run_chain(run, tmp_path / "run2", spec, jobs=1, window=128)
        eight = run_chain(run, tmp_path / "run8", spec, jobs=8, window=128)
        d1, d2, d8 = output_digests(first), output_digests(second), output_digests(eight)
        report = json.loads((first / "report.json").read_text())
        c.note(f"single-threaded chain {elapsed:.1f}s; {len(d1)} artifacts; "
               f"mean lesion dice {report['summary']['averages']['lesion_dice']:.4f}")
        assert elapsed < 30
        assert d1 == d2, "outputs differ between identical runs"
        assert d1 == d8, "outputs differ between --jobs 1 and --jobs 8"
