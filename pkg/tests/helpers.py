import numpy as np


def ball(shape, center, radius):
    g = np.ogrid[tuple(slice(0, n) for n in shape)]
    return (sum((x - c) ** 2 for x, c in zip(g, center)) <= radius**2).astype(np.uint8)


def cube(shape, lo, size):
    m = np.zeros(shape, dtype=np.uint8)
    m[tuple(slice(a, a + s) for a, s in zip(lo, np.broadcast_to(size, 3)))] = 1
    return m


def phantom_spec(shape=(64, 64, 48), seed=7):
    a = [round(n * 0.33) for n in shape[:2]] + [shape[2] // 2]
    b = [round(n * 0.7) for n in shape[:2]] + [shape[2] // 2]
    return {
        "name": "chain",
        "seed": seed,
        "shape": list(shape),
        "noise_sigma": 0.05,
        "lesions": [
            {"center": a, "r_wt": 12, "r_tc": 8, "r_et": 5},
            {"center": b, "r_wt": 9, "r_tc": 6, "r_et": 4},
        ],
        "fp_blobs": [{"center": [6, 6, 6], "radius": 2, "mean_prob": 0.45, "channel": "ET"}],
    }


def run_chain(run, root, spec, jobs=1, window=32):
    """phantom -> infer x3 -> ensemble -> postprocess -> evaluate through the CLI entry point."""
    import json

    root.mkdir(parents=True, exist_ok=True)
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(spec))
    ph, pred, gt = root / "phantom", root / "pred", root / "gt"
    pred.mkdir()
    gt.mkdir()
    j = str(jobs)
    w = str(window)

    def ok(*argv):
        code = run([str(a) for a in argv])
        assert code == 0, argv

    ok("phantom", "--spec", spec_path, "--out-dir", ph)
    image, probs = ph / "case_0000_image.npy", ph / "case_0000_probs.npy"
    variants = [[], ["--blend", "gaussian"], ["--tta"]]
    maps = []
    for i, extra in enumerate(variants):
        out = root / f"m{i}.npy"
        ok("infer", "--case", image, "--predictor", f"field:{probs}", "--window", w, "--jobs", j, "--out", out, *extra)
        maps.append(out)
    ok("ensemble", "--probs", *maps, "--out", root / "ens.npy")
    ok("postprocess", "--probs", root / "ens.npy", "--out-seg", pred / "case_0000_seg.npy",
       "--out-masks", root / "masks.npy")
    (gt / "case_0000_gt.npy").write_bytes((ph / "case_0000_gt.npy").read_bytes())
    ok("evaluate", "--pred-dir", pred, "--gt-dir", gt, "--report", root / "report.json",
       "--csv", root / "report.csv", "--jobs", j)
    return root


def output_digests(root):
    """sha256 of every artifact under root, manifests excluded (they carry timings)."""
    import hashlib

    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file() and not p.name.endswith("manifest.json")
    }


# acceptance bookkeeping: one line per criterion, echoed in the terminal summary
ACCEPTANCE = []


class criterion:
    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None and exc is not None:
            detail = (detail + "; " if detail else "") + (str(exc).splitlines() or [exc_type.__name__])[0]
        line = f"criterion {self.number} {status}: {self.title}" + (f" [{detail}]" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return False
