"""Lag selection by VAR/AIC, recursive feature elimination and min-max scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .forest import ForestParams, fit_forest, importance
from .ingest import AlignedFrame

log = logging.getLogger(__name__)

SIGMA_JITTER = 1e-12


class FeatureSelectionError(ValueError):
    pass


@dataclass
class VarFit:
    p: int
    A: list  # A[i] multiplies Y_{t-i-1}; each n x n
    c: np.ndarray
    sigma_hat: np.ndarray
    T_eff: int
    T: int
    residuals: np.ndarray  # T_eff x n
    regressors: np.ndarray  # T_eff x (1 + n p)

    @property
    def n(self) -> int:
        return self.c.size


def _lag_matrix(Y: np.ndarray, p: int) -> np.ndarray:
    n, T = Y.shape
    cols = [np.ones(T - p)]
    for lag in range(1, p + 1):
        cols.extend(Y[:, p - lag:T - lag])
    return np.column_stack(cols)


def fit_var(Y, p: int, names: Sequence[str] | None = None) -> VarFit:
    """Least-squares VAR(p) with intercept on an ``n x T`` matrix.

    Residual covariance is ``E'E / (T - p)``. ``p = 0`` fits the mean only.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n, T = Y.shape
    names = list(names) if names is not None else [f"series {i}" for i in range(n)]
    if p < 0:
        raise FeatureSelectionError("lag order must be non-negative")
    if T <= p * n + 1:
        raise FeatureSelectionError(f"VAR({p}) on {n} series needs more than {p * n + 1} observations, got {T}")
    if p > 0:
        for i in range(n):
            if np.ptp(Y[i]) == 0:
                raise FeatureSelectionError(f"rank-deficient regressors: {names[i]} is constant")
    Z = _lag_matrix(Y, p)
    if p > 0:
        rank = np.linalg.matrix_rank(Z)
        if rank < Z.shape[1]:
            # first regressor column that adds nothing to the span
            for j in range(2, Z.shape[1] + 1):
                if np.linalg.matrix_rank(Z[:, :j]) < j:
                    feat = (j - 2) % n
                    lag = (j - 2) // n + 1
                    raise FeatureSelectionError(
                        f"rank-deficient regressors: {names[feat]} at lag {lag} is collinear with earlier columns"
                    )
    target = Y[:, p:].T
    B, *_ = np.linalg.lstsq(Z, target, rcond=None)
    E = target - Z @ B
    T_eff = T - p
    sigma = E.T @ E / T_eff
    A = [B[1 + i * n:1 + (i + 1) * n].T.copy() for i in range(p)]
    return VarFit(p, A, B[0].copy(), sigma, T_eff, T, E, Z)


def log_det(sigma: np.ndarray) -> tuple[float, bool]:
    """``ln det(sigma)``, adding 1e-12 on the diagonal when singular.

    Returns the value and whether the jitter was needed.
    """
    sign, val = np.linalg.slogdet(sigma)
    if sign > 0 and np.isfinite(val):
        return float(val), False
    sign, val = np.linalg.slogdet(sigma + SIGMA_JITTER * np.eye(sigma.shape[0]))
    if sign <= 0 or not np.isfinite(val):
        raise FeatureSelectionError("residual covariance determinant not finite after regularisation")
    return float(val), True


def aic(fit: VarFit, n: int | None = None, T: int | None = None) -> float:
    """``ln det(sigma_hat) + 2 p n^2 / T``; ``T`` defaults to the raw length."""
    n = fit.n if n is None else n
    T = fit.T if T is None else T
    value, regularized = log_det(fit.sigma_hat)
    if regularized:
        log.warning("VAR(%d) residual covariance singular; added %g to the diagonal", fit.p, SIGMA_JITTER)
    return value + 2.0 * fit.p * n * n / T


@dataclass
class LagChoice:
    lag: int
    aic: float
    curve: dict  # p -> AIC
    regularized: list = field(default_factory=list)


def select_lag(target, feature, p_range: Iterable[int] = range(11), sample_size: str = "raw",
               names=("target", "feature")) -> LagChoice:
    """Fit a bivariate VAR(p) of (target, feature) for each p and keep the
    lowest AIC; ties go to the smaller p.

    ``sample_size`` picks the T in the penalty: ``"raw"`` (series length) or
    ``"effective"`` (length minus p).
    """
    target = np.asarray(target, dtype=np.float64)
    feature = np.asarray(feature, dtype=np.float64)
    if target.shape != feature.shape or target.ndim != 1:
        raise FeatureSelectionError("target and feature must be 1-D and of the same length")
    Y = np.vstack([target, feature])
    if not np.isfinite(Y).all():
        raise FeatureSelectionError("series must be gap-free")
    return scan_aic(Y, p_range, sample_size, names)


def scan_aic(Y, p_range: Iterable[int] = range(11), sample_size: str = "raw", names=None) -> LagChoice:
    """AIC scan over lag orders for any ``n x T`` system (n = 1 gives an AR scan)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    ps = sorted(set(int(p) for p in p_range))
    if not ps:
        raise FeatureSelectionError("empty lag range")
    if sample_size not in ("raw", "effective"):
        raise FeatureSelectionError("sample_size must be 'raw' or 'effective'")
    curve, regularized = {}, []
    for p in ps:
        fit = fit_var(Y, p, names)
        T = fit.T if sample_size == "raw" else fit.T_eff
        value, reg = log_det(fit.sigma_hat)
        if reg:
            regularized.append(p)
        curve[p] = value + 2.0 * p * fit.n * fit.n / T
    best = min(ps, key=lambda p: (curve[p], p))
    return LagChoice(best, curve[best], curve, regularized)


@dataclass
class LagTable:
    lags: dict  # feature -> lag
    aic: dict = field(default_factory=dict)  # feature -> AIC at the chosen lag
    curves: dict = field(default_factory=dict)  # feature -> {p: AIC}
    regularized: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lags": dict(self.lags),
            "aic": dict(self.aic),
            "curves": {k: {str(p): v for p, v in c.items()} for k, c in self.curves.items()},
            "regularized": {k: list(v) for k, v in self.regularized.items() if v},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LagTable":
        curves = {k: {int(p): v for p, v in c.items()} for k, c in doc.get("curves", {}).items()}
        return cls({k: int(v) for k, v in doc["lags"].items()}, dict(doc.get("aic", {})), curves,
                   dict(doc.get("regularized", {})))


def lag_table(frame: AlignedFrame, target: str, features: Sequence[str] | None = None,
              p_range: Iterable[int] = range(11), sample_size: str = "raw") -> LagTable:
    features = [f for f in (features or frame.features) if f != target]
    y = frame.row(target)
    table = LagTable({})
    for name in features:
        choice = select_lag(y, frame.row(name), p_range, sample_size, (target, name))
        table.lags[name] = choice.lag
        table.aic[name] = choice.aic
        table.curves[name] = choice.curve
        table.regularized[name] = choice.regularized
    return table


def apply_lags(frame: AlignedFrame, lags: Mapping[str, int], target: str) -> AlignedFrame:
    """Shift each non-target row by its lag (day d takes the value from day
    d - lag) and drop the first ``max(lag)`` days from every row."""
    missing = [f for f in frame.features if f != target and f not in lags]
    if missing:
        raise FeatureSelectionError(f"no lag given for {missing}")
    used = {f: int(lags[f]) for f in frame.features if f != target}
    if any(v < 0 for v in used.values()):
        raise FeatureSelectionError("lags must be non-negative")
    max_lag = max(used.values(), default=0)
    if max_lag >= frame.n_days:
        raise FeatureSelectionError(f"lag {max_lag} leaves no days in a {frame.n_days}-day frame")
    D = frame.n_days
    rows = np.empty((len(frame.features), D - max_lag))
    for i, name in enumerate(frame.features):
        lag = 0 if name == target else used[name]
        rows[i] = frame.values[i, max_lag - lag:D - lag]
    meta = dict(frame.metadata)
    meta["lags"] = used
    meta["lag_trim"] = max_lag
    return AlignedFrame(frame.calendar.slice(max_lag), frame.features, rows, meta)


@dataclass
class RankEntry:
    feature: str
    importance: float
    round: int  # 0 for kept features, else the elimination round (1-based)


@dataclass
class ImportanceRanking:
    """Kept features first (importance descending), then eliminated ones,
    most recently eliminated first."""

    entries: list

    @property
    def kept(self) -> list[str]:
        return [e.feature for e in self.entries if e.round == 0]

    def top(self, k: int) -> list[str]:
        return [e.feature for e in self.entries[:k]]

    def to_dict(self) -> dict:
        return {"entries": [{"feature": e.feature, "importance": e.importance, "round": e.round}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ImportanceRanking":
        return cls([RankEntry(e["feature"], float(e["importance"]), int(e["round"])) for e in doc["entries"]])


def rfe(X, y, names: Sequence[str], keep: int, step: int = 1,
        forest_params: ForestParams = ForestParams()) -> ImportanceRanking:
    """Recursive feature elimination driven by forest importances.

    ``X`` is ``samples x features``. Each round refits the forest on the
    surviving columns and drops the ``step`` least important (never more than
    needed to reach ``keep``). Equal importances drop the higher column index
    first.
    """
    X = np.asarray(X, dtype=np.float64)
    names = list(names)
    if X.shape[1] != len(names):
        raise FeatureSelectionError("one name per column required")
    if keep < 1 or step < 1:
        raise FeatureSelectionError("keep and step must be at least 1")
    if keep > len(names):
        raise FeatureSelectionError(f"keep={keep} exceeds the {len(names)} available features")
    alive = list(range(len(names)))
    eliminated = []  # (round, column, importance)
    rnd = 0
    while True:
        forest = fit_forest(X[:, alive], y, forest_params)
        imp = importance(forest)
        if len(alive) == keep:
            break
        rnd += 1
        n_drop = min(step, len(alive) - keep)
        # ascending importance; among equals the larger column index first
        order = sorted(range(len(alive)), key=lambda i: (imp[i], -alive[i]))
        dropped = order[:n_drop]
        for i in dropped:
            eliminated.append((rnd, alive[i], float(imp[i])))
        drop_set = set(dropped)
        alive = [c for i, c in enumerate(alive) if i not in drop_set]

    kept = sorted(zip(alive, imp), key=lambda t: (-t[1], t[0]))
    entries = [RankEntry(names[c], float(v), 0) for c, v in kept]
    for r in range(rnd, 0, -1):
        batch = sorted((e for e in eliminated if e[0] == r), key=lambda e: (-e[2], e[1]))
        entries.extend(RankEntry(names[c], v, r) for _, c, v in batch)
    return ImportanceRanking(entries)


def minmax_normalize(frame: AlignedFrame, fit_days: slice | None = None) -> AlignedFrame:
    """Scale each row to ``(x - min) / (max - min)``.

    Min and max come from ``fit_days`` (all days by default) and are stored in
    ``metadata["minmax"]`` for later inversion. Constant rows become 0.0.
    """
    fit_days = fit_days if fit_days is not None else slice(None)
    ref = frame.values[:, fit_days]
    lo = ref.min(axis=1)
    hi = ref.max(axis=1)
    span = hi - lo
    out = np.zeros_like(frame.values)
    bounds = {}
    for i, name in enumerate(frame.features):
        if span[i] == 0:
            log.warning("feature %s is constant; normalised to 0.0", name)
        else:
            out[i] = (frame.values[i] - lo[i]) / span[i]
        bounds[name] = [float(lo[i]), float(hi[i])]
    meta = dict(frame.metadata)
    meta["minmax"] = bounds
    return AlignedFrame(frame.calendar, frame.features, out, meta)


def denormalize(values, bounds) -> np.ndarray:
    lo, hi = bounds
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo
