import numpy as np
import pytest

from lesionpipe.errors import ValidationError
from lesionpipe.metrics import evaluate_case
from lesionpipe.phantom import FPBlob, Lesion, PhantomSpec, generate_case
from lesionpipe.postprocess import PostprocessConfig, postprocess_pipeline
from lesionpipe.tuner import SearchGrid, score_config, tune


@pytest.fixture(scope="module")
def corpus():
    cases = []
    for i, sigma in enumerate([0.0, 0.05, 0.1, 0.1]):
        spec = PhantomSpec(
            seed=100 + i, shape=(40, 40, 40),
            lesions=(Lesion((20, 20, 20), (12,) * 3, (8,) * 3, (5,) * 3),),
            noise_sigma=sigma,
            fp_blobs=(FPBlob((4, 4, 4), 2, 0.45, "ET"), FPBlob((35, 35, 35), 2, 0.45, "ET")),
        )
        c = generate_case(spec)
        cases.append((c.probs, c.gt))
    return cases


def _direct_lesion_dice(corpus, cfg):
    vals = []
    for probs, gt in corpus:
        _, seg = postprocess_pipeline(probs, cfg)
        r = evaluate_case(seg, gt)
        vals.append(np.mean([r.channels[c].lesion_dice for c in ("TC", "WT", "ET")]))
    return float(np.mean(vals))


def test_single_candidate(corpus):
    grid = SearchGrid({"thresholds.t_et": [0.4]})
    best, board = tune(corpus, grid)
    assert len(board) == 1 and best.values == (0.4,)
    assert best.score == pytest.approx(_direct_lesion_dice(corpus, best.config), abs=1e-12)


@pytest.mark.parametrize("filters", ["default", "off"])
def test_et_threshold_ordering(corpus, filters):
    base = PostprocessConfig() if filters == "default" else PostprocessConfig(filters={"tc": None, "wt": None, "et": None})
    grid = SearchGrid({"thresholds.t_et": [0.3, 0.4, 0.6]}, base=base)
    best, board = tune(corpus, grid)
    scores = {r.values[0]: r.score for r in board}
    for t, s in scores.items():
        cfg = PostprocessConfig.from_dict({**base.to_dict(), "thresholds": {"t_tc": 0.5, "t_wt": 0.5, "t_et": t}})
        assert s == pytest.approx(_direct_lesion_dice(corpus, cfg), abs=1e-12)
    assert scores[0.4] > scores[0.3] and scores[0.6] > scores[0.3]
    assert [r.score for r in board] == sorted(scores.values(), reverse=True)


def test_tie_break_lexicographic(corpus):
    # ET -> TC replacement never triggers here, so both values score identically
    grid = SearchGrid({"et_to_tc_min_voxels": [5, 3], "thresholds.t_et": [0.4]})
    best, board = tune(corpus, grid)
    assert board[0].score == board[1].score
    assert best.values == (3, 0.4)


def test_best_score_reproducible_and_order_invariant(corpus):
    grid = SearchGrid({"thresholds.t_et": [0.3, 0.5], "filters.et.t_p_mid": [0.5, 0.9]}, objective="composite")
    best, board = tune(corpus, grid)
    assert len(board) == len(grid) == 4
    again, _ = score_config(corpus, best.config, "composite")
    assert again == best.score
    _, board_rev = tune(corpus[::-1], grid)
    assert {r.values: r.score for r in board} == {r.values: r.score for r in board_rev}


def test_parallel_matches_serial(corpus):
    grid = SearchGrid({"thresholds.t_et": [0.3, 0.4, 0.6]}, objective="legacy_dice")
    _, serial = tune(corpus, grid, jobs=1)
    _, parallel = tune(corpus, grid, jobs=2)
    assert [(r.values, r.score) for r in serial] == [(r.values, r.score) for r in parallel]


def test_grid_errors(corpus):
    with pytest.raises(ValidationError):
        tune([], SearchGrid({"thresholds.t_et": [0.4]}))
    with pytest.raises(ValidationError):
        SearchGrid({})
    with pytest.raises(ValidationError):
        SearchGrid({"thresholds.t_et": []})
    with pytest.raises(ValidationError):
        SearchGrid({"thresholds.t_et": [0.4]}, objective="hd")
    with pytest.raises(ValidationError, match="t_et"):
        SearchGrid({"thresholds.t_et": [1.5]}).candidates()
    with pytest.raises(ValidationError, match="does not name"):
        SearchGrid({"thresholds.t_xx": [0.1]}).candidates()


def test_grid_from_dict():
    g = SearchGrid.from_dict({"objective": "legacy_dice", "params": {"filters.wt.t_s_lower": [50, 100]},
                              "base": PostprocessConfig().to_dict()})
    assert len(g) == 2 and g.objective == "legacy_dice"
    values, cfg = g.candidates()[0]
    assert values == (50,) and cfg.filters["wt"].t_s_lower == 50
