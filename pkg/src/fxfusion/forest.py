"""Random-forest regressor with impurity-decrease importances.

Trees are grown by the kernel in ``fxfusion._kernels``: variance-reduction
splits at midpoints between consecutive distinct values, depth-first with the
left child first. All randomness (bootstrap rows, per-node feature subsets) is
drawn here from per-tree seed sequences, so a forest is reproducible from its
params alone and identical across kernel backends.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int = 2
    features_per_split: int | float | None = None  # None -> ceil(p / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ForestError("min_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ForestError("max_depth must be non-negative")

    def mtry(self, n_features: int) -> int:
        f = self.features_per_split
        if f is None:
            m = math.ceil(n_features / 3)
        elif isinstance(f, float):
            if not 0.0 < f <= 1.0:
                raise ForestError("fractional features_per_split must lie in (0, 1]")
            m = math.ceil(f * n_features)
        else:
            m = int(f)
        return max(1, min(n_features, m))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _kernels.predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)


@dataclass
class Forest:
    params: ForestParams
    n_features: int
    trees: list


def _tree_rng(params: ForestParams, n_trees: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(n_trees)]


def bootstrap_indices(params: ForestParams, n_samples: int) -> list[np.ndarray]:
    """Row multisets used by each tree (drawn first from each tree's stream)."""
    out = []
    for rng in _tree_rng(params, params.n_trees):
        out.append(rng.integers(0, n_samples, n_samples) if params.bootstrap else np.arange(n_samples))
    return out


def fit_forest(X, y, params: ForestParams = ForestParams()) -> Forest:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ForestError(f"X rows ({X.shape}) must match y length ({y.shape})")
    n, p = X.shape
    if n < 2:
        raise ForestError("need at least two samples")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ForestError("non-finite values in training data")
    if y.max() == y.min():
        log.warning("target has zero variance; every tree is a single leaf")
    mtry = params.mtry(p)
    max_depth = -1 if params.max_depth is None else params.max_depth
    trees = []
    for rng in _tree_rng(params, params.n_trees):
        idx = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        if mtry < p:
            keys = rng.random((2 * n + 1, p))
        else:
            keys = np.zeros((1, p))
        trees.append(Tree(*_kernels.grow_tree(X, y, idx, max_depth, params.min_leaf, mtry, keys)))
    return Forest(params, p, trees)


def predict(forest: Forest, x) -> float | np.ndarray:
    """Mean of the trees' leaf values; ``x`` is one feature vector or a matrix."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(X))
    if X.shape[1] != forest.n_features:
        raise ForestError(f"expected {forest.n_features} features, got {X.shape[1]}")
    out = np.zeros(X.shape[0])
    for tree in forest.trees:
        out += tree.predict(X)
    out /= len(forest.trees)
    return float(out[0]) if single else out


def raw_importance(forest: Forest) -> np.ndarray:
    """Summed impurity decrease per feature over every split of every tree."""
    total = np.zeros(forest.n_features)
    for tree in forest.trees:
        split = tree.feature >= 0
        total += np.bincount(tree.feature[split], weights=tree.gain[split], minlength=forest.n_features)
    return total


def importance(forest: Forest) -> np.ndarray:
    """Raw importances normalised to sum to 1; all zeros if nothing split."""
    raw = raw_importance(forest)
    s = raw.sum()
    return raw / s if s > 0 else raw


def forest_to_dict(forest: Forest) -> dict:
    return {
        "params": asdict(forest.params),
        "n_features": forest.n_features,
        "trees": [
            {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "count", "gain")}
            for t in forest.trees
        ],
    }


def forest_from_dict(doc: dict) -> Forest:
    trees = []
    for t in doc["trees"]:
        trees.append(Tree(
            np.asarray(t["feature"], dtype=np.int64),
            np.asarray(t["threshold"], dtype=np.float64),
            np.asarray(t["left"], dtype=np.int64),
            np.asarray(t["right"], dtype=np.int64),
            np.asarray(t["value"], dtype=np.float64),
            np.asarray(t["count"], dtype=np.int64),
            np.asarray(t["gain"], dtype=np.float64),
        ))
    return Forest(ForestParams(**doc["params"]), int(doc["n_features"]), trees)
