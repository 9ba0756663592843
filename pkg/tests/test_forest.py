import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fxfusion.forest import (
    ForestError, ForestParams, bootstrap_indices, fit_forest, forest_from_dict, forest_to_dict, importance, predict,
    raw_importance,
)
from fxfusion.synth import brute_force_best_split


def test_exact_fit_single_deep_tree():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    y = X[:, 0].copy()
    f = fit_forest(X, y, ForestParams(n_trees=1, min_leaf=1, bootstrap=False, features_per_split=3))
    assert np.mean((predict(f, X) - y) ** 2) < 1e-20


def test_constant_target_single_leaf():
    X = np.random.default_rng(1).normal(size=(20, 2))
    f = fit_forest(X, np.full(20, 3.0), ForestParams(n_trees=3))
    assert all(t.n_splits == 0 for t in f.trees)
    assert predict(f, X[0]) == 3.0
    assert np.array_equal(importance(f), np.zeros(2))


def test_root_split_matches_brute_force_example():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 5.0, 5.0])
    f = fit_forest(X, y, ForestParams(n_trees=1, max_depth=1, min_leaf=1, bootstrap=False))
    t = f.trees[0]
    assert (t.feature[0], t.threshold[0]) == (0, 1.5)
    assert t.gain[0] == pytest.approx(25.0)


@settings(max_examples=25)
@given(st.integers(0, 2**20))
def test_raw_importance_equals_summed_gains(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 4))
    y = X[:, 1] + rng.normal(0, 0.3, 40)
    f = fit_forest(X, y, ForestParams(n_trees=5, seed=seed))
    raw = raw_importance(f)
    assert np.all(raw >= 0)
    total = sum(float(t.gain[t.feature >= 0].sum()) for t in f.trees)
    assert abs(raw.sum() - total) <= 1e-9 * max(1.0, total)
    imp = importance(f)
    assert imp.sum() == pytest.approx(1.0)


@settings(max_examples=25)
@given(st.integers(0, 2**20))
def test_children_partition_parent(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    t = fit_forest(X, y, ForestParams(n_trees=1, min_leaf=2, seed=seed)).trees[0]
    for node in np.flatnonzero(t.feature >= 0):
        assert t.count[t.left[node]] + t.count[t.right[node]] == t.count[node]
        assert t.count[t.left[node]] >= 2 and t.count[t.right[node]] >= 2
    leaves = t.feature < 0
    assert t.count[leaves].sum() == 30


def test_determinism_and_seed():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(60, 4)), rng.normal(size=60)
    a = fit_forest(X, y, ForestParams(n_trees=10, seed=4))
    b = fit_forest(X, y, ForestParams(n_trees=10, seed=4))
    c = fit_forest(X, y, ForestParams(n_trees=10, seed=5))
    assert np.array_equal(predict(a, X), predict(b, X))
    assert not np.array_equal(predict(a, X), predict(c, X))


def test_bootstrap_indices_match_fit_stream():
    params = ForestParams(n_trees=3, seed=9)
    idx = bootstrap_indices(params, 25)
    assert len(idx) == 3 and all(i.size == 25 and i.max() < 25 for i in idx)
    X = np.arange(25.0)[:, None]
    f = fit_forest(X, X[:, 0], ForestParams(n_trees=3, seed=9, min_leaf=1))
    assert [t.count[0] for t in f.trees] == [25, 25, 25]


def test_mtry():
    assert ForestParams().mtry(10) == 4
    assert ForestParams(features_per_split=0.5).mtry(10) == 5
    assert ForestParams(features_per_split=20).mtry(10) == 10
    with pytest.raises(ForestError):
        ForestParams(features_per_split=1.5).mtry(3)


def test_predict_checks_width():
    f = fit_forest(np.zeros((4, 2)) + np.arange(4)[:, None], np.arange(4.0), ForestParams(n_trees=2))
    with pytest.raises(ForestError):
        predict(f, np.zeros(3))
    assert predict(f, np.zeros((5, 2))).shape == (5,)


def test_fit_errors():
    with pytest.raises(ForestError):
        fit_forest(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ForestError):
        fit_forest(np.array([[np.nan], [1.0]]), np.zeros(2))


def test_serialisation_round_trip():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    f = fit_forest(X, y, ForestParams(n_trees=4))
    g = forest_from_dict(forest_to_dict(f))
    assert np.array_equal(predict(f, X), predict(g, X))


def test_root_split_agrees_with_brute_force_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(4, 40))
        X = np.round(rng.normal(size=(n, 3)), 1)
        y = rng.normal(size=n)
        t = fit_forest(X, y, ForestParams(n_trees=1, max_depth=1, min_leaf=1, bootstrap=False,
                                          features_per_split=3)).trees[0]
        j, thr, gain = brute_force_best_split(X, y)
        if j < 0:
            assert t.feature[0] == -1
            continue
        assert (t.feature[0], t.threshold[0]) == (j, thr)
        assert t.gain[0] == pytest.approx(gain, rel=1e-9, abs=1e-12)
