import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fxfusion import tuner
from fxfusion.tuner import (COMPLETED, FAILED, PRUNED, PrunerSettings, SearchSpace, Study, Trial, TrialPruned,
                            TunerError)
from helpers import surrogate_objective

SPACE = SearchSpace()


def test_space_default_sets():
    assert SPACE.hidden == (8, 16, 32, 64, 128)
    assert SPACE.fc == (8, 16, 32, 64)
    assert SPACE.learning_rate == (1e-5, 1e-2)
    assert SPACE.batch == (8, 16, 32, 48, 64, 80, 96, 112, 128)
    assert len(SPACE.window) == 28 and SPACE.window[-4:] == (30, 40, 50, 60)


@pytest.mark.parametrize("kwargs", [{"learning_rate": (1e-2, 1e-5)}, {"learning_rate": (0.0, 1.0)},
                                    {"dropout": (0.5, 0.1)}, {"batch": ()}])
def test_space_rejects(kwargs):
    with pytest.raises(TunerError):
        SearchSpace(**kwargs)


def test_space_round_trip():
    assert SearchSpace.from_dict(json.loads(json.dumps(SPACE.to_dict()))) == SPACE


@given(st.integers(0, 2**32 - 1))
def test_suggest_in_space(seed):
    cfg = tuner.suggest(SPACE, np.random.default_rng(seed))
    assert SPACE.contains(cfg)
    assert cfg["fc"] <= cfg["hidden"]


def test_thousand_draws_respect_bounds():
    rng = np.random.default_rng(0)
    draws = [tuner.suggest(SPACE, rng) for _ in range(1000)]
    assert all(1e-5 <= d["learning_rate"] <= 1e-2 for d in draws)
    assert sum(d["fc"] > d["hidden"] for d in draws) == 0


def test_singleton_fc_subset():
    space = SearchSpace(hidden=(8,))
    rng = np.random.default_rng(1)
    assert {tuner.suggest(space, rng)["fc"] for _ in range(200)} == {8}


def test_empty_fc_subset():
    with pytest.raises(TunerError):
        tuner.suggest(SearchSpace(hidden=(4,)), np.random.default_rng(0))


def test_log_uniform_midpoint():
    rng = np.random.default_rng(3)
    lr = np.array([tuner.suggest(SPACE, rng)["learning_rate"] for _ in range(10_000)])
    assert abs((lr < 10 ** -3.5).mean() - 0.5) < 0.05


def test_window_uniform_over_set():
    rng = np.random.default_rng(4)
    w = [tuner.suggest(SPACE, rng)["window"] for _ in range(5600)]
    counts = np.array([w.count(v) for v in SPACE.window])
    assert counts.min() > 0 and set(w) <= set(SPACE.window)


# pruning

def _completed(n, values_by_step):
    out = []
    for i in range(n):
        t = Trial(i, {}, COMPLETED, dict(values_by_step), 0.0)
        out.append(t)
    return out


def test_prune_needs_startup_trials():
    s = PrunerSettings(n_startup=3, n_warmup=0)
    t = Trial(9, {})
    assert tuner.report_and_maybe_prune(t, 1, 100.0, s, _completed(2, {1: 0.0})) == "continue"
    assert tuner.report_and_maybe_prune(t, 1, 100.0, s, _completed(3, {1: 0.0})) == "prune"


def test_prune_never_in_warmup():
    s = PrunerSettings(n_startup=0, n_warmup=5)
    hist = _completed(5, {k: 0.0 for k in range(10)})
    t = Trial(9, {})
    assert all(tuner.report_and_maybe_prune(t, k, 1e9, s, hist) == "continue" for k in range(5))
    assert tuner.report_and_maybe_prune(t, 5, 1e9, s, hist) == "prune"


def test_prune_strict_median():
    s = PrunerSettings(n_startup=1, n_warmup=0)
    hist = [Trial(i, {}, COMPLETED, {0: v}, v) for i, v in enumerate([1.0, 2.0, 3.0])]
    t = Trial(9, {})
    assert tuner.report_and_maybe_prune(t, 0, 2.0, s, hist) == "continue"
    assert tuner.report_and_maybe_prune(t, 0, 2.0 + 1e-12, s, hist) == "prune"
    assert tuner.report_and_maybe_prune(t, 0, 1.0, s, hist) == "continue"


def test_prune_ignores_unfinished_and_missing_steps():
    s = PrunerSettings(n_startup=1, n_warmup=0)
    hist = [Trial(0, {}, PRUNED, {0: 0.0}), Trial(1, {}, COMPLETED, {0: 0.0}, 0.0)]
    t = Trial(9, {})
    assert tuner.report_and_maybe_prune(t, 3, 5.0, s, hist) == "continue"
    assert tuner.report_and_maybe_prune(t, 0, 5.0, s, hist) == "prune"


def test_prune_nan_and_disabled():
    t = Trial(0, {})
    assert tuner.report_and_maybe_prune(t, 0, float("nan"), PrunerSettings(), []) == "prune"
    off = PrunerSettings(n_startup=0, n_warmup=0, enabled=False)
    assert tuner.report_and_maybe_prune(t, 0, 1e9, off, _completed(3, {0: 0.0})) == "continue"


def test_report_steps_must_increase():
    t = Trial(0, {})
    t.report(1.0, 0)
    t.report(1.0, 2)
    with pytest.raises(TunerError):
        t.report(1.0, 2)


# studies

def test_single_trial_is_best():
    study = tuner.optimize(lambda t: 3.0, 1, seed=2)
    assert study.best_trial is study.trials[0] and study.best_trial.value == 3.0


def test_best_is_minimal_completed():
    values = iter([5.0, 1.0, 1.0, 7.0])
    study = tuner.optimize(lambda t: next(values), 4)
    assert study.best_trial.number == 1


def test_failed_trials_do_not_stop_study():
    def objective(t):
        if t.number % 2:
            raise ValueError("boom")
        return float(t.number)

    study = tuner.optimize(objective, 4)
    assert [t.state for t in study.trials] == [COMPLETED, FAILED, COMPLETED, FAILED]
    assert "boom" in study.trials[1].error


def test_non_finite_objective_fails_trial():
    study = tuner.optimize(lambda t: 1.0 if t.number else math.inf, 2)
    assert study.trials[0].state == FAILED and study.best_trial.number == 1


def test_all_failed_raises_with_diagnostics():
    def objective(t):
        raise RuntimeError(f"bad {t.number}")

    with pytest.raises(tuner.StudyFailed) as info:
        tuner.optimize(objective, 3)
    assert [d["number"] for d in info.value.diagnostics] == [0, 1, 2]
    assert "bad 2" in str(info.value)


def test_pruned_without_report_is_an_error():
    def objective(t):
        raise TrialPruned

    with pytest.raises(TunerError):
        tuner.optimize(objective, 1)


def test_adversarial_objective_gets_pruned():
    def objective(t):
        # every later trial reports worse curves than all earlier ones
        for step in range(10):
            t.report(t.number + step, step)
            if t.should_prune():
                raise TrialPruned
        return float(t.number)

    study = tuner.optimize(objective, 20, pruner=PrunerSettings(n_startup=3, n_warmup=2))
    states = [t.state for t in study.trials]
    assert states[:3] == [COMPLETED] * 3
    assert states.count(COMPLETED) < 20
    assert all(len(t.intermediate) >= 1 for t in study.trials if t.state == PRUNED)
    assert all(max(t.intermediate) >= 2 for t in study.trials if t.state == PRUNED)
    assert study.best_trial.state == COMPLETED


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_finds_optimum(seed):
    study = tuner.optimize(surrogate_objective, 50, seed=seed)
    best = study.best_trial
    assert best.state == COMPLETED
    assert 1e-3 / 3 <= best.config["learning_rate"] <= 3e-3
    assert all(t.value is None for t in study.trials if t.state == PRUNED)


def test_determinism_and_resumption(tmp_path):
    full = tuner.optimize(surrogate_objective, 12, seed=7)
    part = tuner.optimize(surrogate_objective, 5, seed=7)
    resumed = Study.from_dict(json.loads(json.dumps(part.to_dict())))
    resumed.optimize(surrogate_objective, 7)
    assert [t.to_dict() for t in resumed.trials] == [t.to_dict() for t in full.trials]
    again = tuner.optimize(surrogate_objective, 12, seed=7)
    assert again.to_dict() == full.to_dict()
    other = tuner.optimize(surrogate_objective, 12, seed=8)
    assert other.trials[0].config != full.trials[0].config


def test_draws_do_not_depend_on_outcomes():
    a = tuner.optimize(lambda t: 1.0, 6, seed=3)
    b = tuner.optimize(lambda t: float(t.number), 6, seed=3)
    assert [t.config for t in a.trials] == [t.config for t in b.trials]


def test_journal(tmp_path):
    path = tmp_path / "trials.jsonl"
    study = tuner.optimize(surrogate_objective, 8, seed=1, journal=path)
    lines = path.read_text().splitlines()
    assert len(lines) == 16
    assert json.loads(lines[0])["state"] == "running"
    latest = tuner.load_journal(path)
    assert [latest[i]["state"] for i in range(8)] == [t.state for t in study.trials]


def test_trial_table():
    study = tuner.optimize(surrogate_objective, 3, seed=0)
    rows = study.table()
    assert len(rows) == 3 and len(rows[0]) == len(tuner.TRIAL_TABLE_HEADER)
