"""End-to-end forecasting pipeline over a workspace of series files and texts.

Stages: align series -> textual features (topic scan, LDA, pooling) ->
per-feature VAR lags, RFE and min-max scaling, each fit on the days before
the test block -> windows -> Bi-LSTM -> reports.

The network never sees the raw target row. The target enters as an own-lag
copy (``<target>_own``) whose lag comes from an AR AIC scan over p >= 1,
like every other feature enters at its VAR lag.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import featsel, net, topics
from .evaluation import ForecastReport
from .forest import ForestParams, fit_forest, predict as forest_predict
from .ingest import AlignedFrame, align, calendar_from_series, read_series
from .textfeat import FAMILIES, TextRecord, assemble_textual_features, feature_family, read_corpus

log = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


@dataclass
class RunConfig:
    series: dict = field(default_factory=dict)  # name -> csv path
    texts: str | None = None
    target: str = "target"
    seed: int = 0
    edge_policy: str = "hold"
    lda: dict = field(default_factory=lambda: {"k_min": 2, "k_max": 6, "iterations": 200, "top_n": 10,
                                               "alpha": None, "beta": 0.01, "topics": None})
    lags: dict = field(default_factory=lambda: {"p_min": 0, "p_max": 10, "sample_size": "raw"})
    rfe: dict = field(default_factory=lambda: {"keep": 12, "step": 1, "n_trees": 100, "min_leaf": 2})
    split: dict = field(default_factory=lambda: {"test_size": 155, "val_fraction": 0.2})
    model: dict = field(default_factory=lambda: {"hidden": 32, "fc": 16, "dropout": 0.1, "learning_rate": 3e-3,
                                                 "batch": 32, "window": 3, "epochs": 200, "patience": 20})
    families: list = field(default_factory=lambda: list(FAMILIES))
    tune: dict = field(default_factory=lambda: {"n_trials": 20, "n_startup": 5, "n_warmup": 5, "epochs": 60})
    synth: dict = field(default_factory=dict)

    SECTIONS = ("lda", "lags", "rfe", "split", "model", "tune", "synth")

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "RunConfig":
        cfg = cls()
        unknown = set(doc) - set(asdict(cfg))
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        for key, value in doc.items():
            if key in cls.SECTIONS:
                getattr(cfg, key).update(value)
            else:
                setattr(cfg, key, value)
        if base is not None:
            cfg.series = {k: str((base / v).resolve()) if not Path(v).is_absolute() else v
                          for k, v in cfg.series.items()}
            if cfg.texts and not Path(cfg.texts).is_absolute():
                cfg.texts = str((base / cfg.texts).resolve())
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, exclude: Sequence[str] = ()) -> str:
        """Hash of everything except file locations and ``exclude`` keys."""
        doc = self.to_dict()
        for key in ("series", "texts", *exclude):
            doc.pop(key)
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:10]

    def model_config(self, **overrides) -> net.ModelConfig:
        return net.ModelConfig(**{**self.model, "seed": self.seed, **overrides})

    def validate(self):
        if not self.series:
            raise PipelineError("config names no series files")
        if self.target not in self.series:
            raise PipelineError(f"target {self.target!r} has no series file")
        missing = [p for p in list(self.series.values()) + ([self.texts] if self.texts else []) if not Path(p).exists()]
        if missing:
            raise PipelineError(f"missing input files: {missing}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise PipelineError(f"unknown textual families {bad}")


@dataclass
class Split:
    n_days: int
    test_size: int
    val_fraction: float

    @property
    def fit_days(self) -> slice:
        """Days visible to training (inputs and targets of training windows)."""
        return slice(0, self.n_days - self.test_size)

    def partition(self, samples: Sequence[net.WindowSample]):
        n = len(samples)
        if self.test_size >= n:
            raise PipelineError(f"test size {self.test_size} leaves no training windows out of {n}")
        train = list(samples[:n - self.test_size])
        test = list(samples[n - self.test_size:])
        n_val = int(round(len(train) * self.val_fraction))
        if n_val and n_val < len(train):
            return train[:-n_val], train[-n_val:], test
        return train, [], test


@dataclass
class Fitted:
    config: net.ModelConfig
    inputs: list
    result: net.TrainResult
    report: ForecastReport
    bounds: tuple


class Pipeline:
    """Lazily computed stages; each is computed once per instance."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config

    @property
    def own(self) -> str:
        return f"{self.config.target}_own"

    @cached_property
    def frame(self) -> AlignedFrame:
        cfg = self.config
        series = {name: read_series(path, name=name) for name, path in cfg.series.items()}
        calendar = calendar_from_series(series[cfg.target])
        ordered = [series[cfg.target]] + [s for n, s in sorted(series.items()) if n != cfg.target]
        return align(ordered, calendar, cfg.edge_policy)

    @cached_property
    def records(self) -> list[TextRecord]:
        return read_corpus(self.config.texts) if self.config.texts else []

    @cached_property
    def corpus(self) -> list[list[str]]:
        texts = [r.text if r.text is not None else " ".join(r.tokens or ()) for r in self.records]
        return topics.tokenize_corpus(texts)

    @cached_property
    def topic_scan(self) -> tuple[int, dict]:
        lda = self.config.lda
        return topics.select_topic_count(self.corpus, range(lda["k_min"], lda["k_max"] + 1), lda["iterations"],
                                         self.config.seed, lda["alpha"], lda["beta"], lda["top_n"])

    @cached_property
    def topic_model(self) -> topics.TopicModel:
        lda = self.config.lda
        K, _ = self.topic_scan
        return topics.fit_lda(self.corpus, K, lda["iterations"], lda["alpha"], lda["beta"], self.config.seed)

    @cached_property
    def textual(self) -> AlignedFrame | None:
        if not self.records:
            return None
        model = self.topic_model
        chosen = self.config.lda.get("topics") or list(range(1, model.K + 1))
        feats = assemble_textual_features(self.records, model, chosen, self.frame.calendar)
        return feats.to_frame()

    @property
    def quantitative(self) -> list[str]:
        """Candidate quantitative inputs: the target's own-lag copy and every other series."""
        return [self.own] + [f for f in self.frame.features if f != self.config.target]

    @property
    def textual_names(self) -> list[str]:
        return list(self.textual.features) if self.textual is not None else []

    @cached_property
    def combined(self) -> AlignedFrame:
        frame = self.frame.with_rows([self.own], self.frame.row(self.config.target))
        if self.textual is not None:
            frame = frame.with_rows(self.textual.features, self.textual.values)
        return frame

    @cached_property
    def lag_table(self) -> featsel.LagTable:
        """Lags chosen on the days before the test block (lagging trims days
        from the front, so the test block is the same either way)."""
        lg = self.config.lags
        p_range = range(lg["p_min"], lg["p_max"] + 1)
        test_size = int(self.config.split["test_size"])
        if test_size >= self.combined.n_days:
            raise PipelineError(f"test size {test_size} leaves no days for lag selection")
        fit = self.combined.days_slice(0, self.combined.n_days - test_size)
        others = [f for f in fit.features if f not in (self.config.target, self.own)]
        table = featsel.lag_table(fit, self.config.target, others, p_range, lg["sample_size"])
        own = featsel.scan_aic(fit.row(self.config.target)[None, :],
                               range(max(1, lg["p_min"]), lg["p_max"] + 1), lg["sample_size"], [self.own])
        table.lags[self.own] = own.lag
        table.aic[self.own] = own.aic
        table.curves[self.own] = own.curve
        table.regularized[self.own] = own.regularized
        return table

    @cached_property
    def lagged(self) -> AlignedFrame:
        return featsel.apply_lags(self.combined, self.lag_table.lags, self.config.target)

    @cached_property
    def split(self) -> Split:
        sp = self.config.split
        return Split(self.lagged.n_days, int(sp["test_size"]), float(sp["val_fraction"]))

    @cached_property
    def normalized(self) -> AlignedFrame:
        return featsel.minmax_normalize(self.lagged, self.split.fit_days)

    @cached_property
    def ranking(self) -> featsel.ImportanceRanking:
        """RFE over quantitative candidates: features on day d, target on day d + 1, training days only."""
        return self._rfe(min(int(self.config.rfe["keep"]), len(self.quantitative)))

    @cached_property
    def full_ranking(self) -> featsel.ImportanceRanking:
        """Elimination down to one feature, so ``top(k)`` is defined for every k."""
        return self._rfe(1)

    def _rfe(self, keep: int) -> featsel.ImportanceRanking:
        r = self.config.rfe
        names = self.quantitative
        fit = self.lagged.values[:, self.split.fit_days]
        X = np.vstack([fit[self.lagged.features.index(n)] for n in names]).T[:-1]
        y = fit[self.lagged.features.index(self.config.target)][1:]
        params = ForestParams(n_trees=int(r["n_trees"]), min_leaf=int(r["min_leaf"]), seed=self.config.seed)
        return featsel.rfe(X, y, names, keep, int(r["step"]), params)

    def quant_inputs(self, k: int | None = None) -> list[str]:
        return self.ranking.kept if k is None else self.ranking.top(k)

    def text_inputs(self, families: Sequence[str] | None = None) -> list[str]:
        fams = set(self.config.families if families is None else families)
        return [n for n in self.textual_names if feature_family(n) in fams]

    def inputs(self, families: Sequence[str] | None = None, k: int | None = None) -> list[str]:
        return self.quant_inputs(k) + self.text_inputs(families)

    def windows(self, inputs: Sequence[str], w: int):
        samples = net.make_windows(self.normalized, self.config.target, w, inputs)
        return self.split.partition(samples)

    @property
    def target_bounds(self) -> tuple:
        return tuple(self.normalized.metadata["minmax"][self.config.target])

    def _actuals(self, samples):
        raw = self.lagged.row(self.config.target)
        return raw[[s.day + 1 for s in samples]]

    def _days(self, samples):
        return [self.lagged.calendar.days[s.day + 1].isoformat() for s in samples]

    def fit(self, inputs: Sequence[str], model: net.ModelConfig, label: str = "bilstm") -> Fitted:
        train, val, test = self.windows(inputs, model.window)
        result = net.train(train, model, val or None)
        preds = net.predict_series(result.params, model, test, self.target_bounds)
        report = ForecastReport(label, self._days(test), preds, self._actuals(test),
                                config={**asdict(model), "inputs": list(inputs)})
        return Fitted(model, list(inputs), result, report, self.target_bounds)

    def evaluate_params(self, params, model: net.ModelConfig, inputs: Sequence[str], label: str) -> ForecastReport:
        _, _, test = self.windows(inputs, model.window)
        preds = net.predict_series(params, model, test, self.target_bounds)
        return ForecastReport(label, self._days(test), preds, self._actuals(test),
                              config={**asdict(model), "inputs": list(inputs)})

    def persistence(self, w: int) -> ForecastReport:
        """Tomorrow equals today, on the same test days as a window-``w`` model."""
        _, _, test = self.windows(self.quant_inputs(), w)
        raw = self.lagged.row(self.config.target)
        preds = raw[[s.day for s in test]]
        return ForecastReport("persistence", self._days(test), preds, self._actuals(test))

    def forest_baseline(self, inputs: Sequence[str], w: int, n_trees: int = 100) -> ForecastReport:
        """Random forest on flattened windows (training plus validation windows)."""
        train, val, test = self.windows(inputs, w)
        X, y = net.stack_windows(train + val)
        Xt, _ = net.stack_windows(test)
        forest = fit_forest(X.reshape(len(X), -1), y, ForestParams(n_trees=n_trees, seed=self.config.seed))
        lo, hi = self.target_bounds
        preds = forest_predict(forest, Xt.reshape(len(Xt), -1)) * (hi - lo) + lo
        return ForecastReport("random_forest", self._days(test), preds, self._actuals(test))


def tuning_objective(pipe: Pipeline, epochs: int | None = None, families: Sequence[str] | None = None):
    """Trial objective: validation MAE (exchange-rate units) on the last part
    of the training split. Validation MSE is reported after every epoch so the
    pruner can stop the trial."""
    from .tuner import TrialPruned

    inputs = pipe.inputs(families)
    lo, hi = pipe.target_bounds

    def objective(trial) -> float:
        overrides = dict(trial.config)
        if epochs is not None:
            overrides["epochs"] = epochs
        model = pipe.config.model_config(**overrides)
        train, val, _ = pipe.windows(inputs, model.window)
        if not val:
            raise PipelineError("tuning needs a validation split (val_fraction > 0)")

        def on_epoch(epoch, train_loss, val_loss):
            trial.report(val_loss, epoch)
            if trial.should_prune():
                raise TrialPruned()

        result = net.train(train, model, val, on_epoch)
        Xv, yv = net.stack_windows(val)
        preds = net.predict_normalized(result.params, model, Xv)
        return float(np.mean(np.abs(preds - yv)) * (hi - lo))

    return objective
