"""Window-size and feature-count sweeps on synthetic workspaces.

The planted panel has informative features at lags 1..3 and five
informative quantitative series. Sizes and counts are restricted to 1..7 and
1..10 to bound the runtime; the argmin checks only get easier with fewer
candidates.
"""

import json

import pytest

from fxfusion.evaluation import rfe_sweep, window_sweep
from fxfusion.pipeline import Pipeline, RunConfig
from helpers import small_workspace

SEEDS = range(10)
FULL_SCALE = {
    "split": {"test_size": 155, "val_fraction": 0.2},
    "lda": {"k_min": 2, "k_max": 6, "iterations": 100},
    "rfe": {"keep": 12, "n_trees": 50},
    "model": {"hidden": 32, "fc": 16, "batch": 32, "epochs": 200, "patience": 20},
}


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweeps")
    out = []
    for seed in SEEDS:
        cfg = small_workspace(root / f"s{seed}", seed, days=470, extra=FULL_SCALE)
        out.append(Pipeline(RunConfig.from_dict(json.loads(cfg.read_text()), base=cfg.parent)))
    return out


def _argmin(rows):
    return min(rows, key=lambda r: r["mae"])["value"]


@pytest.mark.slow
def test_window_argmin_near_planted_horizon(pipelines, record_property):
    best = []
    for pipe in pipelines:
        inputs = pipe.inputs()

        def run(w):
            rep = pipe.fit(inputs, pipe.config.model_config(window=w)).report
            return rep.mae, rep.rmse

        best.append(_argmin(window_sweep(range(1, 8), run)))
    record_property("argmin windows", best)
    assert sum(w in (2, 3, 4) for w in best) >= 0.7 * len(best), best


@pytest.mark.slow
def test_rfe_curve_minimum_near_informative_count(pipelines, record_property):
    best = []
    for pipe in pipelines:
        model = pipe.config.model_config()

        def run(k):
            rep = pipe.fit(pipe.full_ranking.top(k) + pipe.text_inputs(), model).report
            return rep.mae, rep.rmse

        best.append(_argmin(rfe_sweep(range(1, 11), len(pipe.quantitative), run)))
    record_property("argmin counts", best)
    assert sum(4 <= k <= 7 for k in best) >= 0.7 * len(best), best
