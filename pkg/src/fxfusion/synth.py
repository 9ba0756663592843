"""Seeded synthetic workspaces with planted structure.

A panel has an AR target around a fixed level, informative features that
copy the target at a planted lag (times a loading, plus noise) and pure
noise features. Texts carry a fraction ``rho`` of next-day signal and are
written with words from planted topics.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import AlignedFrame, TradingCalendar, label_movement, series_to_csv
from .textfeat import TextRecord, write_corpus

TARGET = "target"


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    lag: int = 0
    loading: float = 0.0  # 0 makes a pure noise feature
    noise: float = 1.0

    @property
    def informative(self) -> bool:
        return self.loading != 0.0


def default_features(n_informative: int = 5, n_noise: int = 15, lags=(1, 2, 3, 1, 2)) -> tuple:
    feats = [FeatureSpec(f"inf{i + 1}", lags[i % len(lags)], 1.0, 0.002) for i in range(n_informative)]
    feats += [FeatureSpec(f"noise{i + 1}", 0, 0.0, 0.005) for i in range(n_noise)]
    return tuple(feats)


@dataclass(frozen=True)
class SynthSpec:
    n_days: int = 470
    ar: tuple = (0.9,)
    level: float = 1.1
    noise_scale: float = 0.005
    features: tuple = field(default_factory=default_features)
    rho: float = 0.8
    texts_per_day: float = 3.0  # Poisson mean
    news_fraction: float = 0.5
    n_topics: int = 3
    words_per_topic: int = 40
    doc_length: tuple = (20, 40)
    topic_purity: float = 0.9  # share of a document's words drawn from its own topic
    sentiment_scale: float = 2.0  # return / (scale * sd) before clipping
    missing_rate: float = 0.0
    start: str = "2022-01-03"
    seed: int = 0

    def __post_init__(self):
        if self.n_days < 3:
            raise SynthError("n_days must be at least 3")
        if not 0.0 <= self.rho <= 1.0:
            raise SynthError(f"rho {self.rho} outside [0, 1]")
        if spectral_radius(self.ar) >= 1.0:
            raise SynthError(f"AR coefficients {self.ar} are not stationary")
        if not 0.0 <= self.missing_rate < 1.0:
            raise SynthError("missing_rate must lie in [0, 1)")
        if any(f.lag < 0 for f in self.features):
            raise SynthError("feature lags must be non-negative")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names) or TARGET in names:
            raise SynthError("feature names must be unique and differ from the target")

    def replace(self, **changes) -> "SynthSpec":
        doc = {**asdict(self), **changes}
        doc["features"] = tuple(f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in doc["features"])
        return SynthSpec(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["features"] = [asdict(f) for f in self.features]
        doc["ar"] = list(self.ar)
        doc["doc_length"] = list(self.doc_length)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        if "features" in doc:
            doc["features"] = tuple(FeatureSpec(**f) for f in doc["features"])
        for key in ("ar", "doc_length"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def spectral_radius(ar) -> float:
    """Largest eigenvalue modulus of the AR companion matrix."""
    ar = np.asarray(ar, dtype=np.float64)
    if ar.size == 0:
        return 0.0
    comp = np.zeros((ar.size, ar.size))
    comp[0] = ar
    comp[1:, :-1] = np.eye(ar.size - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def business_days(start: str | dt.date, n: int) -> TradingCalendar:
    day = start if isinstance(start, dt.date) else dt.date.fromisoformat(start)
    days = []
    while len(days) < n:
        if day.weekday() < 5:
            days.append(day)
        day += dt.timedelta(days=1)
    return TradingCalendar(tuple(days))


def _rngs(seed: int):
    panel, texts, gaps = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(panel), np.random.default_rng(texts), np.random.default_rng(gaps)


def gen_target(spec: SynthSpec, rng: np.random.Generator, history: int = 0, burn_in: int = 200) -> np.ndarray:
    """AR deviations around ``spec.level``; returns ``history + n_days`` values."""
    p = len(spec.ar)
    n = burn_in + history + spec.n_days
    eps = rng.normal(0.0, spec.noise_scale, n)
    dev = np.zeros(n + p)
    for t in range(n):
        acc = eps[t]
        for i, a in enumerate(spec.ar):
            acc += a * dev[p + t - 1 - i]
        dev[p + t] = acc
    return spec.level + dev[p + burn_in:]


def gen_panel(spec: SynthSpec) -> tuple[AlignedFrame, str]:
    """Gap-free frame with the target first, then ``spec.features`` in order."""
    rng, _, _ = _rngs(spec.seed)
    history = max((f.lag for f in spec.features), default=0)
    full = gen_target(spec, rng, history)
    y = full[history:]
    D = spec.n_days
    rows = [y]
    for f in spec.features:
        noise = rng.normal(0.0, f.noise, D) if f.noise > 0 else np.zeros(D)
        if f.informative:
            rows.append(f.loading * full[history - f.lag:history - f.lag + D] + noise)
        else:
            rows.append(noise)
    meta = {"synth": {"target": TARGET, "informative": [f.name for f in spec.features if f.informative],
                      "lags": {f.name: f.lag for f in spec.features if f.informative}}}
    frame = AlignedFrame(business_days(spec.start, D), [TARGET] + [f.name for f in spec.features],
                         np.vstack(rows), meta)
    return frame, TARGET


def topic_vocabulary(n_topics: int, words_per_topic: int) -> list[list[str]]:
    return [[f"t{k + 1}w{j:03d}" for j in range(words_per_topic)] for k in range(n_topics)]


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def gen_topic_corpus(n_docs: int, n_topics: int = 3, seed: int = 0, words_per_topic: int = 40,
                     doc_length=(20, 40), purity: float = 0.9, rng: np.random.Generator | None = None):
    """Token bags from planted topics with disjoint vocabularies.

    Each document picks one topic; each word comes from that topic with
    probability ``purity``, otherwise from a uniformly chosen topic. Within a
    topic words follow a Zipf law. Returns ``(bags, labels)`` with 1-based labels.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    vocab = topic_vocabulary(n_topics, words_per_topic)
    weights = _zipf_weights(words_per_topic)
    labels = rng.integers(0, n_topics, n_docs)
    lengths = rng.integers(doc_length[0], doc_length[1] + 1, n_docs)
    bags = []
    for k, n in zip(labels, lengths):
        own = rng.random(n) < purity
        src = np.where(own, k, rng.integers(0, n_topics, n))
        idx = rng.choice(words_per_topic, size=n, p=weights)
        bags.append([vocab[s][i] for s, i in zip(src, idx)])
    return bags, (labels + 1).astype(np.int64)


def gen_texts(spec: SynthSpec, target, calendar: TradingCalendar | None = None, return_topics: bool = False):
    """Scored texts for every day but the last.

    Movement = rho * next-day label + (1 - rho) * U(0, 1); sentiment =
    rho * clip(next-day change / (sentiment_scale * sd)) + (1 - rho) * U(-1, 1).
    """
    y = np.asarray(target, dtype=np.float64)
    calendar = calendar if calendar is not None else business_days(spec.start, y.size)
    if len(calendar) != y.size:
        raise SynthError("calendar and target lengths differ")
    _, rng, _ = _rngs(spec.seed)
    labels = label_movement(y)
    diff = np.diff(y)
    sd = diff.std()
    signed = np.clip(diff / (spec.sentiment_scale * sd), -1.0, 1.0) if sd > 0 else np.zeros_like(diff)
    counts = rng.poisson(spec.texts_per_day, y.size - 1)
    total = int(counts.sum())
    bags, topics = gen_topic_corpus(total, spec.n_topics, words_per_topic=spec.words_per_topic,
                                    doc_length=spec.doc_length, purity=spec.topic_purity, rng=rng)
    news = rng.random(total) < spec.news_fraction
    u_move = rng.random(total)
    u_sent = rng.uniform(-1.0, 1.0, total)
    records = []
    i = 0
    for d, c in enumerate(counts):
        for _ in range(c):
            move = spec.rho * labels[d] + (1.0 - spec.rho) * u_move[i]
            sent = spec.rho * signed[d] + (1.0 - spec.rho) * u_sent[i]
            records.append(TextRecord(
                id=f"t{i:06d}",
                date=calendar.days[d],
                source="News" if news[i] else "Analysis",
                sentiment=float(np.clip(sent, -1.0, 1.0)),
                movement=float(np.clip(move, 0.0, 1.0)),
                tokens=tuple(bags[i]),
            ))
            i += 1
    return (records, topics) if return_topics else records


def drop_values(values, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Blank a share of interior entries (first and last stay present)."""
    out = np.array(values, dtype=np.float64)
    if rate > 0 and out.size > 2:
        hit = rng.random(out.size - 2) < rate
        out[1:-1][hit] = np.nan
    return out


def write_workspace(spec: SynthSpec, out_dir) -> dict:
    """Series CSVs, a text corpus and a ground-truth document under ``out_dir``."""
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    frame, target = gen_panel(spec)
    records, topics = gen_texts(spec, frame.row(target), frame.calendar, return_topics=True)
    _, _, gap_rng = _rngs(spec.seed)
    paths = {}
    for name in frame.features:
        vals = frame.row(name) if name == target else drop_values(frame.row(name), spec.missing_rate, gap_rng)
        paths[name] = str(series_to_csv(frame.calendar.days, vals, out / "series" / f"{name}.csv"))
    corpus = write_corpus(records, out / "texts.json")
    truth = {
        "spec": spec.to_dict(),
        "target": target,
        "informative": frame.metadata["synth"]["informative"],
        "lags": frame.metadata["synth"]["lags"],
        "text_topics": topics.tolist(),
    }
    return {"series": paths, "target": target, "texts": str(corpus), "truth": truth}


def brute_force_best_split(X, y, min_leaf: int = 1):
    """Exhaustive best variance-reduction split: ``(feature, threshold, gain)``.

    Tries every feature and every cut between consecutive distinct sorted
    values; SSE is recomputed from scratch for each candidate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    parent = float(((y - y.mean()) ** 2).sum())
    best = (-1, np.nan, -np.inf)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            left = X[:, j] <= thr
            nl = int(left.sum())
            if nl < min_leaf or y.size - nl < min_leaf:
                continue
            yl, yr = y[left], y[~left]
            gain = parent - ((yl - yl.mean()) ** 2).sum() - ((yr - yr.mean()) ** 2).sum()
            if gain > best[2] + 1e-12 * max(1.0, parent):
                best = (j, thr, gain)
    return best


def brute_force_lag(target, feature, p_range=range(11)) -> tuple[int, dict]:
    """AIC scan with an independent VAR fit: per-equation normal equations
    solved via ``numpy.linalg.solve`` and the determinant taken directly."""
    Y = np.vstack([np.asarray(target, float), np.asarray(feature, float)])
    n, T = Y.shape
    curve = {}
    for p in p_range:
        rows = []
        for t in range(p, T):
            r = [1.0]
            for lag in range(1, p + 1):
                r.extend(Y[:, t - lag])
            rows.append(r)
        Z = np.array(rows)
        resp = Y[:, p:].T
        B = np.linalg.solve(Z.T @ Z, Z.T @ resp)
        E = resp - Z @ B
        sigma = E.T @ E / (T - p)
        curve[p] = float(np.log(np.linalg.det(sigma)) + 2.0 * p * n * n / T)
    best = min(curve, key=lambda p: (curve[p], p))
    return best, curve
