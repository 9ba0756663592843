"""Forecast metrics, Diebold-Mariano tests, ablation ranking and sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .textfeat import FAMILIES


class EvaluationError(ValueError):
    pass


def _pair(yhat, y):
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if yhat.size != y.size:
        raise EvaluationError(f"length mismatch: {yhat.size} predictions, {y.size} actuals")
    if y.size == 0:
        raise EvaluationError("empty series")
    return yhat, y


def mae(yhat, y) -> float:
    yhat, y = _pair(yhat, y)
    return float(np.mean(np.abs(yhat - y)))


def rmse(yhat, y) -> float:
    yhat, y = _pair(yhat, y)
    e = np.abs(yhat - y)
    scale = float(e.max())
    if scale == 0.0:
        return 0.0
    # scaled so tiny or huge errors neither underflow nor overflow when squared
    return scale * float(np.sqrt(np.mean((e / scale) ** 2)))


def percentage_improvement(metric_ref: float, metric_combined: float) -> float:
    """(ref - combined) / ref in percent."""
    if not metric_ref > 0:
        raise EvaluationError(f"reference metric must be positive, got {metric_ref}")
    return (metric_ref - metric_combined) / metric_ref * 100.0


@dataclass
class DmResult:
    statistic: float | None
    p_value: float | None
    loss: str
    h: int
    degenerate: bool = False
    hln: bool = False


LOSSES = {"squared": np.square, "absolute": np.abs}


def dm_test(errors_a, errors_b, h: int = 1, loss: str = "squared", hln: bool = False) -> DmResult:
    """Diebold-Mariano test of equal predictive accuracy.

    Negative statistics favour ``errors_a``. The long-run variance uses a
    rectangular window over lags 1..h-1 with 1/n autocovariances. ``hln``
    applies the Harvey-Leybourne-Newbold small-sample factor and takes the
    p-value from Student t with n-1 degrees of freedom.
    """
    if loss not in LOSSES:
        raise EvaluationError(f"loss must be one of {sorted(LOSSES)}")
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("error series must be 1-D and of equal length")
    n = a.size
    if n < 10:
        raise EvaluationError(f"need at least 10 forecast errors, got {n}")
    if h < 1 or h >= n:
        raise EvaluationError(f"horizon must be in [1, {n - 1}]")
    la, lb = LOSSES[loss](a), LOSSES[loss](b)
    d = la - lb
    # a differential constant up to rounding carries no information
    scale = max(float(np.max(np.abs(la))), float(np.max(np.abs(lb))))
    if float(np.ptp(d)) <= 16 * np.finfo(float).eps * scale:
        return DmResult(None, None, loss, h, degenerate=True, hln=hln)
    dbar = d.mean()
    dc = d - dbar
    lrv = float(dc @ dc) / n
    for k in range(1, h):
        lrv += 2.0 * float(dc[k:] @ dc[:-k]) / n
    if not lrv > 0:
        return DmResult(None, None, loss, h, degenerate=True, hln=hln)
    stat = dbar / math.sqrt(lrv / n)
    if hln:
        stat *= math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
        p = 2.0 * stats.t.sf(abs(stat), n - 1)
    else:
        p = 2.0 * stats.norm.sf(abs(stat))
    return DmResult(float(stat), float(min(1.0, p)), loss, h, hln=hln)


def dm_matrix(errors: dict, h: int = 1, loss: str = "squared", hln: bool = False) -> list[dict]:
    """All pairwise tests between the labelled error series."""
    rows = []
    for la, lb in itertools.combinations(errors, 2):
        r = dm_test(errors[la], errors[lb], h, loss, hln)
        rows.append({"a": la, "b": lb, **asdict(r)})
    return rows


@dataclass
class ForecastReport:
    label: str
    days: list
    predictions: np.ndarray
    actuals: np.ndarray
    mae: float = field(init=False)
    rmse: float = field(init=False)
    pi: dict = field(default_factory=dict)  # e.g. {"reference": label, "mae": %, "rmse": %}
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        self.actuals = np.asarray(self.actuals, dtype=np.float64)
        if len(self.days) != self.predictions.size:
            raise EvaluationError("one day label per prediction required")
        self.mae = mae(self.predictions, self.actuals)
        self.rmse = rmse(self.predictions, self.actuals)

    @property
    def errors(self) -> np.ndarray:
        return self.predictions - self.actuals

    def compare(self, reference: "ForecastReport") -> dict:
        self.pi = {
            "reference": reference.label,
            "mae": percentage_improvement(reference.mae, self.mae),
            "rmse": percentage_improvement(reference.rmse, self.rmse),
        }
        return self.pi

    def summary(self) -> dict:
        return {"label": self.label, "n": int(self.predictions.size), "mae": self.mae, "rmse": self.rmse,
                "pi": self.pi, "config": self.config}

    def write(self, out_dir, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / f"{stem}.csv"
        write_table(table, ["date", "actual", "prediction"],
                    [[d, repr(float(a)), repr(float(p))] for d, a, p in zip(self.days, self.actuals, self.predictions)])
        summary = out / f"{stem}.json"
        write_json(self.summary(), summary)
        return table, summary


def persistence_forecast(previous_actuals) -> np.ndarray:
    """Random-walk baseline: tomorrow equals today."""
    return np.asarray(previous_actuals, dtype=np.float64).copy()


def write_table(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_json(doc, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class AblationCell:
    label: str
    mae: float
    rmse: float
    mae_rank: int = 0
    rmse_rank: int = 0
    score: float = 0.0  # 0.5 * mae_rank + 0.5 * rmse_rank
    weighted_rank: int = 0


def combination_label(families: Sequence[str]) -> str:
    return "+".join(f"({f})" for f in families) if families else "(0)"


def family_combinations(families: Sequence[str] = FAMILIES) -> list[tuple]:
    """Every subset, smallest first, then lexicographic: (), (A,), ..., (A,B,C,D)."""
    return [c for r in range(len(families) + 1) for c in itertools.combinations(families, r)]


def _ordinal_ranks(values: Sequence[float]) -> list[int]:
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def rank_cells(cells: list[AblationCell]) -> list[AblationCell]:
    """Fill ranks in place (1 = lowest error) and return the cells ordered by
    weighted rank; equal scores are ordered by MAE rank."""
    for c, r in zip(cells, _ordinal_ranks([c.mae for c in cells])):
        c.mae_rank = r
    for c, r in zip(cells, _ordinal_ranks([c.rmse for c in cells])):
        c.rmse_rank = r
    for c in cells:
        c.score = 0.5 * c.mae_rank + 0.5 * c.rmse_rank
    ordered = sorted(cells, key=lambda c: (c.score, c.mae_rank))
    for r, c in enumerate(ordered, start=1):
        c.weighted_rank = r
    return ordered


def ablation_run(evaluate: Callable[[tuple], tuple[float, float]],
                 families: Sequence[str] = FAMILIES) -> list[AblationCell]:
    """Evaluate every family subset with ``evaluate(subset) -> (mae, rmse)``.

    Any failure aborts the whole table.
    """
    cells = []
    for combo in family_combinations(families):
        try:
            m, r = evaluate(combo)
        except Exception as exc:
            raise EvaluationError(f"ablation cell {combination_label(combo)} failed: {exc}") from exc
        cells.append(AblationCell(combination_label(combo), float(m), float(r)))
    return rank_cells(cells)


def ablation_rows(cells: Sequence[AblationCell]) -> list[list]:
    return [[c.label, repr(c.mae), repr(c.rmse), c.mae_rank, c.rmse_rank, repr(c.score), c.weighted_rank]
            for c in cells]


ABLATION_HEADER = ["combination", "mae", "rmse", "mae_rank", "rmse_rank", "score", "weighted_rank"]

WINDOW_SIZES = tuple(range(1, 25)) + (30, 40, 50, 60)


def sweep(values: Sequence, evaluate: Callable[[object], tuple[float, float]]) -> list[dict]:
    """One ``evaluate(value) -> (mae, rmse)`` per value, in order."""
    rows = []
    for v in values:
        m, r = evaluate(v)
        rows.append({"value": v, "mae": float(m), "rmse": float(r)})
    return rows


def window_sweep(sizes: Sequence[int], evaluate: Callable[[int], tuple[float, float]]) -> list[dict]:
    bad = [w for w in sizes if w not in WINDOW_SIZES]
    if bad:
        raise EvaluationError(f"window sizes outside the search space: {bad}")
    return sweep(sizes, evaluate)


def rfe_sweep(counts: Sequence[int], n_available: int,
              evaluate: Callable[[int], tuple[float, float]]) -> list[dict]:
    bad = [k for k in counts if not 1 <= k <= n_available]
    if bad:
        raise EvaluationError(f"feature counts outside 1..{n_available}: {bad}")
    return sweep(counts, evaluate)
