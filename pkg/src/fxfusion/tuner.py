"""Random-search study with median pruning over the network's hyperparameters."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

RUNNING, COMPLETED, PRUNED, FAILED = "running", "completed", "pruned", "failed"


class TunerError(RuntimeError):
    pass


class TrialPruned(Exception):
    pass


class StudyFailed(TunerError):
    def __init__(self, diagnostics: list):
        lines = "; ".join(f"trial {d['number']}: {d['error']}" for d in diagnostics)
        super().__init__(f"all {len(diagnostics)} trials failed: {lines}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SearchSpace:
    hidden: tuple = (8, 16, 32, 64, 128)
    fc: tuple = (8, 16, 32, 64)
    dropout: tuple = (0.0, 0.5)
    learning_rate: tuple = (1e-5, 1e-2)
    batch: tuple = (8, 16, 32, 48, 64, 80, 96, 112, 128)
    window: tuple = tuple(range(1, 25)) + (30, 40, 50, 60)

    def __post_init__(self):
        lo, hi = self.learning_rate
        if not 0 < lo <= hi:
            raise TunerError("learning-rate bounds must be positive and ordered")
        if not 0.0 <= self.dropout[0] <= self.dropout[1]:
            raise TunerError("dropout bounds must be ordered and non-negative")
        if not (self.hidden and self.fc and self.batch and self.window):
            raise TunerError("discrete choices must be non-empty")

    def contains(self, cfg: dict) -> bool:
        return (cfg["hidden"] in self.hidden and cfg["fc"] in self.fc and cfg["fc"] <= cfg["hidden"]
                and self.dropout[0] <= cfg["dropout"] <= self.dropout[1]
                and self.learning_rate[0] <= cfg["learning_rate"] <= self.learning_rate[1]
                and cfg["batch"] in self.batch and cfg["window"] in self.window)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in doc.items()})


def suggest(space: SearchSpace, rng: np.random.Generator, history=None) -> dict:
    """Independent draw; ``history`` is accepted for interface symmetry and ignored."""
    hidden = int(rng.choice(space.hidden))
    fcs = [v for v in space.fc if v <= hidden]
    if not fcs:
        raise TunerError(f"no fc size allowed with hidden={hidden}")
    fc = int(rng.choice(fcs))
    dropout = float(rng.uniform(*space.dropout))
    lo, hi = space.learning_rate
    lr = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    lr = min(max(lr, lo), hi)  # exp(log(x)) may land an ulp outside
    batch = int(rng.choice(space.batch))
    window = int(rng.choice(space.window))
    return {"hidden": hidden, "fc": fc, "dropout": dropout, "learning_rate": lr, "batch": batch, "window": window}


@dataclass(frozen=True)
class PrunerSettings:
    n_startup: int = 5
    n_warmup: int = 5
    enabled: bool = True


@dataclass
class Trial:
    number: int
    config: dict
    state: str = RUNNING
    intermediate: dict = field(default_factory=dict)  # step -> value
    value: float | None = None
    error: str | None = None
    _study: "Study | None" = field(default=None, repr=False, compare=False)

    def report(self, value: float, step: int):
        if self.intermediate and step <= max(self.intermediate):
            raise TunerError(f"trial {self.number}: step {step} does not increase")
        self.intermediate[int(step)] = float(value)

    def should_prune(self) -> bool:
        if self._study is None or not self.intermediate:
            return False
        step = max(self.intermediate)
        return report_and_maybe_prune(self, step, self.intermediate[step], self._study.pruner,
                                      self._study.trials) == "prune"

    def to_dict(self) -> dict:
        return {"number": self.number, "config": self.config, "state": self.state,
                "intermediate": {str(k): v for k, v in sorted(self.intermediate.items())},
                "value": self.value, "error": self.error}

    @classmethod
    def from_dict(cls, doc: dict) -> "Trial":
        return cls(doc["number"], doc["config"], doc["state"],
                   {int(k): v for k, v in doc.get("intermediate", {}).items()}, doc.get("value"), doc.get("error"))


def report_and_maybe_prune(trial: Trial, step: int, value: float, settings: PrunerSettings, history) -> str:
    """Median rule: prune when, after warm-up, ``value`` is strictly worse
    than the median of completed trials' values at the same step."""
    if not settings.enabled:
        return "continue"
    if value != value:
        return "prune"
    if step < settings.n_warmup:
        return "continue"
    completed = [t for t in history if t.state == COMPLETED and t.number != trial.number]
    if len(completed) < settings.n_startup:
        return "continue"
    at_step = [t.intermediate[step] for t in completed if step in t.intermediate]
    if not at_step:
        return "continue"
    return "prune" if value > float(np.median(at_step)) else "continue"


@dataclass
class Study:
    space: SearchSpace = field(default_factory=SearchSpace)
    seed: int = 0
    pruner: PrunerSettings = field(default_factory=PrunerSettings)
    trials: list = field(default_factory=list)
    journal: Path | None = None

    @property
    def best_trial(self) -> Trial | None:
        done = [t for t in self.trials if t.state == COMPLETED]
        return min(done, key=lambda t: (t.value, t.number)) if done else None

    def trial_rng(self, number: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, number])

    def _log(self, trial: Trial):
        if self.journal is not None:
            with Path(self.journal).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(trial.to_dict(), sort_keys=True) + "\n")

    def run_trial(self, objective: Callable[[Trial], float]) -> Trial:
        number = len(self.trials)
        trial = Trial(number, suggest(self.space, self.trial_rng(number), self.trials), _study=self)
        self.trials.append(trial)
        self._log(trial)
        try:
            value = float(objective(trial))
            if not math.isfinite(value):
                raise TunerError(f"objective returned {value}")
            trial.value = value
            trial.state = COMPLETED
        except TrialPruned:
            trial.state = PRUNED
            if not trial.intermediate:
                raise TunerError(f"trial {number} pruned without reporting")
        except Exception as exc:  # a failed trial must not end the study
            log.warning("trial %d failed: %s", number, exc)
            trial.state = FAILED
            trial.error = f"{type(exc).__name__}: {exc}"
        self._log(trial)
        return trial

    def optimize(self, objective: Callable[[Trial], float], n_trials: int) -> "Study":
        for _ in range(n_trials):
            self.run_trial(objective)
        if self.trials and all(t.state == FAILED for t in self.trials):
            raise StudyFailed([{"number": t.number, "config": t.config, "error": t.error} for t in self.trials])
        return self

    def to_dict(self) -> dict:
        best = self.best_trial
        return {
            "seed": self.seed,
            "space": self.space.to_dict(),
            "pruner": asdict(self.pruner),
            "trials": [t.to_dict() for t in self.trials],
            "best": best.number if best is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict, journal=None) -> "Study":
        study = cls(SearchSpace.from_dict(doc["space"]), doc["seed"], PrunerSettings(**doc["pruner"]),
                    journal=journal)
        for t in doc["trials"]:
            trial = Trial.from_dict(t)
            trial._study = study
            study.trials.append(trial)
        return study

    def table(self) -> list[list]:
        keys = ("hidden", "fc", "dropout", "learning_rate", "batch", "window")
        return [[t.number, t.state, "" if t.value is None else repr(t.value), len(t.intermediate)]
                + [t.config[k] for k in keys] for t in self.trials]


TRIAL_TABLE_HEADER = ["trial", "state", "value", "reports", "hidden", "fc", "dropout", "learning_rate",
                      "batch", "window"]


def optimize(objective: Callable[[Trial], float], n_trials: int, seed: int = 0,
             space: SearchSpace | None = None, pruner: PrunerSettings | None = None,
             journal=None) -> Study:
    study = Study(space or SearchSpace(), seed, pruner or PrunerSettings(), journal=journal)
    return study.optimize(objective, n_trials)


def load_journal(path) -> dict:
    """Latest record per trial number from an append-only journal."""
    latest = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = json.loads(line)
            latest[doc["number"]] = doc
    return latest
