"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, config, or data), 2 I/O
error (missing/unreadable/malformed files).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import ensemble, parse_weights
from .errors import ValidationError
from .metrics import MetricsConfig, evaluate_case, report_rows, summarize
from .npyio import NpyFormatError, read_npy, write_npy
from .phantom import generate_case, generate_prob_map, load_specs
from .postprocess import PostprocessConfig, postprocess_pipeline
from .preprocess import preprocess_case
from .tuner import SearchGrid, tune
from .window import ConstantPredictor, FieldPredictor, WindowGrid, sliding_window_predict, tta_predict

log = logging.getLogger("lesionpipe")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def default_config_path(name: str) -> Path:
    return Path(str(resources.files("lesionpipe") / "data" / name))


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _manifest_path(args, primary) -> Path:
    if args.manifest:
        return Path(args.manifest)
    primary = Path(primary)
    if primary.is_dir():
        return primary / "manifest.json"
    return primary.with_name(primary.name + ".manifest.json")


def _write_manifest(args, config, inputs, outputs, started, wall):
    manifest = {
        "tool": "lesionpipe",
        "version": __version__,
        "subcommand": args.command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started_utc": started,
        "wall_seconds": wall,
    }
    write_json(manifest, _manifest_path(args, outputs[0]))


# --------------------------------------------------------------------- commands


def cmd_preprocess(args):
    mods = [read_npy(p) for p in args.inputs]
    stack, box, original = preprocess_case(mods)
    write_npy(stack, args.out)
    meta = {"crop_box": box.to_dict(), "original_shape": list(original), "modalities": [str(p) for p in args.inputs]}
    write_json(meta, args.meta)
    return {"normalization": "per-modality nonzero z-score"}, list(args.inputs), [args.out, args.meta]


def _window(values) -> tuple[int, int, int]:
    if len(values) == 1:
        return (values[0],) * 3
    if len(values) == 3:
        return tuple(values)
    raise ValidationError("--window takes one or three integers")


def make_predictor(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        try:
            return ConstantPredictor(float(arg)), []
        except ValueError:
            raise ValidationError(f"bad constant predictor value {arg!r}") from None
    if kind == "field":
        return FieldPredictor(read_npy(arg)), [arg]
    if kind == "phantom":
        path, _, index = arg.partition("#")
        specs = load_specs(load_json(path))
        i = int(index) if index else 0
        if not 0 <= i < len(specs):
            raise ValidationError(f"phantom case index {i} out of range (have {len(specs)})")
        return FieldPredictor(generate_prob_map(specs[i])), [path]
    raise ValidationError(f"unknown predictor {spec!r}; use constant:<p>, field:<path>, or phantom:<spec.json>")


def cmd_infer(args):
    grid = WindowGrid(_window(args.window), args.overlap, args.blend)
    predictor, extra_inputs = make_predictor(args.predictor)
    case = read_npy(args.case)
    if case.ndim == 3:
        case = case[None]
    fn = tta_predict if args.tta else sliding_window_predict
    probs = fn(case, predictor, grid, jobs=args.jobs)
    write_npy(probs, args.out)
    config = {"window": list(grid.window), "overlap": grid.overlap, "blend": grid.blend,
              "tta": args.tta, "predictor": args.predictor}
    return config, [args.case, *extra_inputs], [args.out]


def cmd_ensemble(args):
    weights = parse_weights(load_json(args.weights)) if args.weights else \
        parse_weights([{"name": f"model{i}", "tc": 1, "wt": 1, "et": 1} for i in range(len(args.probs))])
    if len(weights) != len(args.probs):
        raise ValidationError(f"{len(args.probs)} probability maps but {len(weights)} weight entries")
    maps = [read_npy(p) for p in args.probs]
    out = ensemble(maps, weights)
    write_npy(out, args.out)
    inputs = list(args.probs) + ([args.weights] if args.weights else [])
    return {"weights": [w.to_dict() for w in weights]}, inputs, [args.out]


def cmd_postprocess(args):
    cfg_path = args.config or default_config_path("default_postprocess.json")
    cfg = PostprocessConfig.from_dict(load_json(cfg_path))
    probs = read_npy(args.probs)
    masks, seg = postprocess_pipeline(probs, cfg)
    write_npy(seg, args.out_seg)
    outputs = [args.out_seg]
    if args.out_masks:
        write_npy(masks, args.out_masks)
        outputs.append(args.out_masks)
    return cfg.to_dict(), [args.probs, cfg_path], outputs


_GT_SUFFIXES = ("_gt",)
_PRED_SUFFIXES = ("_seg", "_pred")


def _case_files(directory, suffixes) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.npy"))
    tagged = [f for f in files if f.stem.endswith(suffixes)]
    chosen = tagged or files
    out = {}
    for f in chosen:
        stem = f.stem
        for s in suffixes:
            if stem.endswith(s):
                stem = stem[: -len(s)]
                break
        out[stem] = f
    return out


def _evaluate_pair(item):
    case, pred_path, gt_path, cfg = item
    return evaluate_case(read_npy(pred_path), read_npy(gt_path), cfg, case)


def _pool_map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def cmd_evaluate(args):
    cfg_path = args.config
    cfg = MetricsConfig.from_dict(load_json(cfg_path)) if cfg_path else MetricsConfig()
    gts = _case_files(args.gt_dir, _GT_SUFFIXES)
    preds = _case_files(args.pred_dir, _PRED_SUFFIXES)
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValidationError(f"no prediction for case(s): {', '.join(missing)}")
    if not gts:
        raise ValidationError(f"no ground-truth .npy files in {args.gt_dir}")
    items = [(c, preds[c], gts[c], cfg) for c in sorted(gts)]
    reports = _pool_map(_evaluate_pair, items, args.jobs)
    write_json({"config": cfg.to_dict(), "summary": summarize(reports),
                "cases": [r.to_dict() for r in reports]}, args.report)
    outputs = [args.report]
    if args.csv:
        rows = list(report_rows(reports))
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        outputs.append(args.csv)
    inputs = [p for _, p, g, _ in items for p in (p, g)] + ([cfg_path] if cfg_path else [])
    return cfg.to_dict(), inputs, outputs


def load_corpus(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    gts = {f.name[: -len("_gt.npy")]: f for f in sorted(directory.glob("*_gt.npy"))}
    probs = {f.name[: -len("_probs.npy")]: f for f in sorted(directory.glob("*_probs.npy"))}
    cases = sorted(set(gts) & set(probs))
    if not cases:
        raise ValidationError(f"no *_probs.npy / *_gt.npy pairs in {directory}")
    return cases, [(read_npy(probs[c]), read_npy(gts[c])) for c in cases]


def cmd_tune(args):
    grid = SearchGrid.from_dict(load_json(args.grid))
    mcfg = MetricsConfig.from_dict(load_json(args.metrics_config)) if args.metrics_config else MetricsConfig()
    cases, corpus = load_corpus(args.corpus_dir)
    best, board = tune(corpus, grid, mcfg, jobs=args.jobs)
    write_json(best.config.to_dict(), args.out)
    outputs = [args.out]
    if args.leaderboard:
        with open(args.leaderboard, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", *grid.names, "score", "score_tc", "score_wt", "score_et"])
            for rank, r in enumerate(board, start=1):
                writer.writerow([rank, *r.values, repr(r.score),
                                 *(repr(r.channel_scores[c]) for c in ("TC", "WT", "ET"))])
        outputs.append(args.leaderboard)
    config = {"objective": grid.objective, "params": grid.params, "base": grid.base.to_dict(),
              "metrics": mcfg.to_dict(), "cases": cases, "best_score": best.score}
    return config, [args.grid, args.corpus_dir], outputs


def cmd_phantom(args):
    specs = load_specs(load_json(args.spec))
    if args.seed is not None:
        specs = [type(s)(**{**s.__dict__, "seed": args.seed + i}) for i, s in enumerate(specs)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, spec in enumerate(specs):
        case = generate_case(spec, with_image=not args.no_image)
        stem = out_dir / f"case_{i:04d}"
        write_npy(case.gt, f"{stem}_gt.npy")
        write_npy(case.probs, f"{stem}_probs.npy")
        outputs += [f"{stem}_gt.npy", f"{stem}_probs.npy"]
        if case.image is not None:
            write_npy(case.image, f"{stem}_image.npy")
            outputs.append(f"{stem}_image.npy")
    echo = out_dir / "spec.json"
    write_json({"cases": [s.to_dict() for s in specs]}, echo)
    return {"num_cases": len(specs), "seed_override": args.seed}, [args.spec], [out_dir, echo, *outputs]


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lesionpipe", description="Tumor segmentation post-processing and lesion-wise evaluation.")
    p.add_argument("--version", action="version", version=f"lesionpipe {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_, fn):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--manifest", help="run manifest path (default: beside the primary output)")
        return sp

    sp = add("preprocess", "crop foreground, normalise and stack four modalities", cmd_preprocess)
    sp.add_argument("--in", dest="inputs", nargs=4, required=True, metavar="NPY", help="t1 t1ce t2 flair volumes")
    sp.add_argument("--out", required=True)
    sp.add_argument("--meta", required=True, help="JSON sidecar with crop box and original shape")

    sp = add("infer", "sliding-window (optionally flip-TTA) prediction", cmd_infer)
    sp.add_argument("--case", required=True)
    sp.add_argument("--predictor", required=True, help="constant:<p> | field:<probs.npy> | phantom:<spec.json>[#i]")
    sp.add_argument("--window", type=int, nargs="+", default=[128])
    sp.add_argument("--overlap", type=float, default=0.5)
    sp.add_argument("--blend", choices=["uniform", "gaussian"], default="uniform")
    sp.add_argument("--tta", action="store_true", help="average over all 8 axis flips")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("ensemble", "per-channel weighted average of probability maps", cmd_ensemble)
    sp.add_argument("--probs", nargs="+", required=True)
    sp.add_argument("--weights", help="JSON list of {name, tc, wt, et}; default uniform")
    sp.add_argument("--out", required=True)

    sp = add("postprocess", "threshold, filter components and build the label map", cmd_postprocess)
    sp.add_argument("--probs", required=True)
    sp.add_argument("--config", help="postprocess JSON (default: shipped configuration)")
    sp.add_argument("--out-seg", required=True)
    sp.add_argument("--out-masks")

    sp = add("evaluate", "legacy and lesion-wise Dice/HD95 over a directory of cases", cmd_evaluate)
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--gt-dir", required=True)
    sp.add_argument("--config", help="metrics JSON (default: 26-connectivity, dilation 3, penalty 374)")
    sp.add_argument("--report", required=True)
    sp.add_argument("--csv")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("tune", "grid-search post-processing parameters on a corpus", cmd_tune)
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--metrics-config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--leaderboard")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("phantom", "generate a synthetic phantom corpus", cmd_phantom)
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, help="override seeds: case i gets seed + i")
    sp.add_argument("--no-image", action="store_true", help="skip the 4-modality intensity volume")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("lesionpipe: error: a command is required", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        print("lesionpipe: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        config, inputs, outputs = args.func(args)
        wall = time.perf_counter() - t0
        _write_manifest(args, config, inputs, outputs, started, wall)
    except (NpyFormatError, OSError) as exc:
        print(f"lesionpipe {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"lesionpipe {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, TypeError) as exc:
        print(f"lesionpipe {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    log.info("%s finished in %.2fs", args.command, wall)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
