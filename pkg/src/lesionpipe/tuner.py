"""Exhaustive grid search over post-processing parameters."""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import CHANNELS
from .errors import ValidationError
from .metrics import MetricsConfig, evaluate_case, mean_exact
from .postprocess import PostprocessConfig, postprocess_pipeline

OBJECTIVES = ("lesion_dice", "legacy_dice", "composite")


def _set_path(d: dict, path: str, value) -> None:
    keys = path.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ValidationError(f"grid parameter {path!r} does not name a config field")
        node = node[k]
    if keys[-1] not in node:
        raise ValidationError(f"grid parameter {path!r} does not name a config field")
    node[keys[-1]] = value


@dataclass(frozen=True)
class SearchGrid:
    params: dict[str, list]
    objective: str = "lesion_dice"
    base: PostprocessConfig = field(default_factory=PostprocessConfig)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.params:
            raise ValidationError("search grid has no parameters")
        for name, values in self.params.items():
            if not isinstance(values, list) or not values:
                raise ValidationError(f"grid parameter {name!r} needs a non-empty list of values")

    @property
    def names(self) -> list[str]:
        return sorted(self.params)

    def __len__(self) -> int:
        return int(np.prod([len(self.params[n]) for n in self.names]))

    def candidates(self) -> list[tuple[tuple, PostprocessConfig]]:
        """All (value tuple, config) pairs; raises if any combination is invalid."""
        out = []
        base = self.base.to_dict()
        for values in itertools.product(*(self.params[n] for n in self.names)):
            d = _deepcopy(base)
            for name, v in zip(self.names, values):
                _set_path(d, name, v)
            try:
                cfg = PostprocessConfig.from_dict(d)
            except ValidationError as exc:
                raise ValidationError(f"invalid grid candidate {dict(zip(self.names, values))}: {exc}") from None
            out.append((tuple(values), cfg))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SearchGrid":
        if not isinstance(d, dict) or "params" not in d:
            raise ValidationError("grid JSON must be an object with a 'params' mapping")
        base = PostprocessConfig.from_dict(d["base"]) if "base" in d else PostprocessConfig()
        return cls(dict(d["params"]), d.get("objective", "lesion_dice"), base)


def _deepcopy(d):
    if isinstance(d, dict):
        return {k: _deepcopy(v) for k, v in d.items()}
    return d


@dataclass
class CandidateResult:
    values: tuple
    config: PostprocessConfig
    score: float
    channel_scores: dict[str, float]


def score_config(corpus, cfg: PostprocessConfig, objective: str = "lesion_dice",
                 metrics_cfg: MetricsConfig | None = None) -> tuple[float, dict[str, float]]:
    """Objective over a corpus of (probs, gt_labelmap) pairs, plus a per-channel breakdown."""
    metrics_cfg = metrics_cfg or MetricsConfig()
    reports = []
    for probs, gt in corpus:
        _, seg = postprocess_pipeline(probs, cfg)
        reports.append(evaluate_case(seg, gt, metrics_cfg))

    def channel_value(ch) -> float:
        if objective == "lesion_dice":
            return ch.lesion_dice
        if objective == "legacy_dice":
            return ch.legacy_dice
        return 0.5 * (ch.lesion_dice + 1.0 - ch.lesion_hd95 / metrics_cfg.penalty_hd95)

    per_channel = {
        name: mean_exact(channel_value(r.channels[name]) for r in reports) for name in CHANNELS
    }
    score = mean_exact(
        mean_exact(channel_value(r.channels[name]) for name in CHANNELS) for r in reports
    )
    return score, per_channel


_WORKER_STATE: dict = {}


def _init_worker(corpus, objective, metrics_cfg):
    _WORKER_STATE.update(corpus=corpus, objective=objective, metrics_cfg=metrics_cfg)


def _score_in_worker(cfg):
    s = _WORKER_STATE
    return score_config(s["corpus"], cfg, s["objective"], s["metrics_cfg"])


def tune(corpus: Sequence, grid: SearchGrid, metrics_cfg: MetricsConfig | None = None,
         jobs: int = 1) -> tuple[CandidateResult, list[CandidateResult]]:
    """Evaluate every grid candidate; return the best and the sorted leaderboard.

    Ties are broken by the lexicographically smaller value tuple (parameter
    names in sorted order).
    """
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("tuning corpus is empty")
    cands = grid.candidates()
    configs = [cfg for _, cfg in cands]
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(corpus, grid.objective, metrics_cfg)) as pool:
            scored = list(pool.map(_score_in_worker, configs))
    else:
        scored = [score_config(corpus, cfg, grid.objective, metrics_cfg) for cfg in configs]
    board = [
        CandidateResult(values, cfg, score, per_ch)
        for (values, cfg), (score, per_ch) in zip(cands, scored)
    ]
    board.sort(key=lambda r: (-r.score, r.values))
    return board[0], board
