"""Daily textual features: source and topic extractors followed by average pooling."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import AlignedFrame, TradingCalendar
from .topics import TopicModel

SOURCES = ("News", "Analysis")
FIELDS = ("sentiment", "movement")
DEFAULT_FILL = {"sentiment": 0.0, "movement": 0.5}
CODOMAIN = {"sentiment": (-1.0, 1.0), "movement": (0.0, 1.0)}

# ablation families: (A) sentiment x source, (B) sentiment x topic,
# (C) movement x source, (D) movement x topic
FAMILIES = ("A", "B", "C", "D")


class TextFeatureError(ValueError):
    pass


@dataclass(frozen=True)
class TextRecord:
    id: str
    date: dt.date
    source: str
    sentiment: float
    movement: float
    tokens: tuple | None = None
    text: str | None = None

    def __post_init__(self):
        if not isinstance(self.date, dt.date):
            object.__setattr__(self, "date", dt.date.fromisoformat(str(self.date)))
        if self.source not in SOURCES:
            raise TextFeatureError(f"text {self.id}: source must be one of {SOURCES}, got {self.source!r}")
        if not -1.0 <= self.sentiment <= 1.0:
            raise TextFeatureError(f"text {self.id}: sentiment {self.sentiment} outside [-1, 1]")
        if not 0.0 <= self.movement <= 1.0:
            raise TextFeatureError(f"text {self.id}: movement {self.movement} outside [0, 1]")


@dataclass
class ExtractorMask:
    """Selection of texts by one extractor; ``selected[i]`` refers to ``records[i]``."""

    name: str
    selected: np.ndarray

    @property
    def count(self) -> int:
        return int(self.selected.sum())


@dataclass
class DailyTextualFeatures:
    calendar: TradingCalendar
    names: list
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_frame(self) -> AlignedFrame:
        return AlignedFrame(self.calendar, list(self.names), self.values.copy(), dict(self.metadata))


def classify_source(records: Sequence[TextRecord]) -> tuple[ExtractorMask, ExtractorMask]:
    is_news = np.array([r.source == "News" for r in records], dtype=bool)
    return ExtractorMask("news", is_news), ExtractorMask("analysis", ~is_news)


def topic_masks(model: TopicModel, topics: Sequence[int]) -> list[ExtractorMask]:
    masks = []
    for k in topics:
        if not 1 <= k <= model.K:
            raise TextFeatureError(f"topic {k} outside 1..{model.K}")
        masks.append(ExtractorMask(f"topic{k}", np.asarray(model.assignment) == k))
    return masks


def day_index(records: Sequence[TextRecord], calendar: TradingCalendar) -> np.ndarray:
    """Calendar position of each record.

    A text dated on a non-trading day counts toward the next trading day;
    texts after the last calendar day get -1.
    """
    ords = calendar.ordinals
    pos = np.searchsorted(ords, [r.date.toordinal() for r in records], side="left")
    return np.where(pos < len(ords), pos, -1).astype(np.int64)


def pool_daily(records: Sequence[TextRecord], mask: ExtractorMask, field: str,
               calendar: TradingCalendar, fill: float | None = None) -> np.ndarray:
    """Per-day mean of ``field`` over the texts selected by ``mask``.

    Days without a selected text take ``fill`` (default: 0.0 for sentiment,
    0.5 for movement).
    """
    if field not in FIELDS:
        raise TextFeatureError(f"field must be one of {FIELDS}")
    fill = DEFAULT_FILL[field] if fill is None else float(fill)
    lo, hi = CODOMAIN[field]
    if not lo <= fill <= hi:
        raise TextFeatureError(f"fill {fill} outside the {field} range [{lo}, {hi}]")
    n_days = len(calendar)
    if len(records) == 0:
        return np.full(n_days, fill)
    days = day_index(records, calendar)
    vals = np.array([getattr(r, field) for r in records], dtype=np.float64)
    keep = mask.selected & (days >= 0)
    sums = np.bincount(days[keep], weights=vals[keep], minlength=n_days)
    counts = np.bincount(days[keep], minlength=n_days)
    out = np.full(n_days, fill)
    has = counts > 0
    out[has] = sums[has] / counts[has]
    # mean of values within [lo, hi] can drift past the bound by one ulp
    return np.clip(out, lo, hi)


def feature_family(name: str) -> str:
    """Ablation family (A-D) of a textual feature row name."""
    topic = name.startswith("topic")
    if name.endswith("_sentiment"):
        return "B" if topic else "A"
    if name.endswith("_movement"):
        return "D" if topic else "C"
    raise TextFeatureError(f"not a textual feature name: {name!r}")


def assemble_textual_features(records: Sequence[TextRecord], topic_model: TopicModel | None,
                              selected_topics: Sequence[int], calendar: TradingCalendar,
                              fill: dict | None = None) -> DailyTextualFeatures:
    """Rows: news/analysis x sentiment/movement, then per selected topic
    sentiment and movement."""
    fill = {**DEFAULT_FILL, **(fill or {})}
    selected_topics = list(selected_topics)
    if selected_topics and topic_model is None:
        raise TextFeatureError("topic rows requested without a topic model")
    if topic_model is not None and len(topic_model.assignment) != len(records):
        raise TextFeatureError(
            f"topic model covers {len(topic_model.assignment)} texts, corpus has {len(records)}"
        )
    news, analysis = classify_source(records)
    names, rows = [], []
    for fld in FIELDS:
        for mask in (news, analysis):
            names.append(f"{mask.name}_{fld}")
            rows.append(pool_daily(records, mask, fld, calendar, fill[fld]))
    masks = topic_masks(topic_model, selected_topics) if selected_topics else []
    for mask in masks:
        for fld in FIELDS:
            names.append(f"{mask.name}_{fld}")
            rows.append(pool_daily(records, mask, fld, calendar, fill[fld]))
    values = np.vstack(rows) if rows else np.zeros((0, len(calendar)))
    meta = {"selected_topics": selected_topics, "n_texts": len(records)}
    return DailyTextualFeatures(calendar, names, values, meta)


def record_from_dict(doc: dict) -> TextRecord:
    missing = [k for k in ("id", "date", "source", "sentiment", "movement") if k not in doc]
    if missing:
        raise TextFeatureError(f"text record missing fields {missing}: {doc!r:.80}")
    tokens = doc.get("tokens")
    return TextRecord(
        id=str(doc["id"]),
        date=dt.date.fromisoformat(doc["date"]),
        source=doc["source"],
        sentiment=float(doc["sentiment"]),
        movement=float(doc["movement"]),
        tokens=tuple(tokens) if tokens is not None else None,
        text=doc.get("text"),
    )


def record_to_dict(rec: TextRecord) -> dict:
    doc = {
        "id": rec.id,
        "date": rec.date.isoformat(),
        "source": rec.source,
        "sentiment": rec.sentiment,
        "movement": rec.movement,
        "text": rec.text if rec.text is not None else " ".join(rec.tokens or ()),
    }
    return doc


def read_corpus(path) -> list[TextRecord]:
    docs = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(docs, list):
        raise TextFeatureError("corpus document must be an array of text objects")
    return [record_from_dict(d) for d in docs]


def write_corpus(records: Sequence[TextRecord], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([record_to_dict(r) for r in records], indent=1) + "\n", encoding="utf-8")
    return path
