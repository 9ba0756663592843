"""Daily series parsing, calendar alignment and gap filling."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EDGE_POLICIES = ("hold", "trim")


class IngestError(ValueError):
    pass


def _parse_date(text: str, line: int | None = None) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        where = f" on line {line}" if line is not None else ""
        raise IngestError(f"unparseable date {text!r}{where}") from None


@dataclass(frozen=True)
class TradingCalendar:
    days: tuple

    def __post_init__(self):
        days = tuple(d if isinstance(d, dt.date) else _parse_date(str(d)) for d in self.days)
        if not days:
            raise IngestError("calendar must contain at least one day")
        for a, b in zip(days, days[1:]):
            if not a < b:
                raise IngestError(f"calendar days must be strictly ascending ({a} then {b})")
        object.__setattr__(self, "days", days)

    def __len__(self):
        return len(self.days)

    @property
    def ordinals(self) -> np.ndarray:
        return np.array([d.toordinal() for d in self.days], dtype=np.float64)

    def slice(self, start: int, stop: int | None = None) -> "TradingCalendar":
        return TradingCalendar(self.days[start:stop])

    def iso(self) -> list[str]:
        return [d.isoformat() for d in self.days]


@dataclass(frozen=True)
class RawSeries:
    """A named daily series; ``values`` holds NaN where the source was empty."""

    name: str
    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.dates),):
            raise IngestError(f"{self.name}: {len(self.dates)} dates but {values.shape} values")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise IngestError(f"{self.name}: dates not strictly ascending ({a} then {b})")
        object.__setattr__(self, "values", values)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())


@dataclass
class AlignedFrame:
    """Feature-by-day matrix on a shared calendar, no missing entries."""

    calendar: TradingCalendar
    features: list
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = list(self.features)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise IngestError("frame values must be a 2-D matrix")
        if self.values.shape != (len(self.features), len(self.calendar)):
            raise IngestError(
                f"frame shape {self.values.shape} does not match "
                f"{len(self.features)} features x {len(self.calendar)} days"
            )
        if len(set(self.features)) != len(self.features):
            raise IngestError("duplicate feature names in frame")
        if np.isnan(self.values).any():
            bad = [f for f, row in zip(self.features, self.values) if np.isnan(row).any()]
            raise IngestError(f"frame has missing entries in {bad}")

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    def row(self, name: str) -> np.ndarray:
        try:
            return self.values[self.features.index(name)]
        except ValueError:
            raise KeyError(f"feature {name!r} not in frame") from None

    def select(self, names: Sequence[str]) -> "AlignedFrame":
        rows = [self.features.index(n) for n in names]
        return AlignedFrame(self.calendar, list(names), self.values[rows].copy(), dict(self.metadata))

    def with_rows(self, names: Sequence[str], rows: np.ndarray) -> "AlignedFrame":
        """Append rows (same calendar) and return a new frame."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return AlignedFrame(
            self.calendar,
            self.features + list(names),
            np.vstack([self.values, rows]),
            dict(self.metadata),
        )

    def days_slice(self, start: int, stop: int | None = None) -> "AlignedFrame":
        return AlignedFrame(
            self.calendar.slice(start, stop),
            list(self.features),
            self.values[:, start:stop].copy(),
            dict(self.metadata),
        )


def parse_series(text: str, date_column: str = "date", value_column: str = "value",
                 name: str | None = None) -> RawSeries:
    """Parse comma-separated text with a header row into a :class:`RawSeries`.

    Rows may come in any order; they are sorted by date. Empty value cells
    become missing points.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: header row required") from None
    header = [h.strip() for h in header]
    for col in (date_column, value_column):
        if col not in header:
            raise IngestError(f"column {col!r} missing from header {header}")
    di = header.index(date_column)
    vi = header.index(value_column)
    points: dict = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"malformed row on line {line_no}: expected {len(header)} cells, got {len(row)}")
        day = _parse_date(row[di], line_no)
        cell = row[vi].strip()
        if cell == "":
            value = np.nan
        else:
            try:
                value = float(cell)
            except ValueError:
                raise IngestError(f"malformed value {cell!r} on line {line_no}") from None
        if day in points:
            raise IngestError(f"duplicate date {day.isoformat()} on line {line_no}")
        points[day] = value
    dates = tuple(sorted(points))
    return RawSeries(name or value_column, dates, np.array([points[d] for d in dates]))


def read_series(path, date_column="date", value_column="value", name=None) -> RawSeries:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_series(text, date_column, value_column, name or path.stem)


def calendar_from_series(series: RawSeries) -> TradingCalendar:
    """Calendar made of every date listed in ``series`` (typically the target)."""
    return TradingCalendar(series.dates)


def interpolate_linear(series: RawSeries, calendar: TradingCalendar, edge: str = "hold") -> np.ndarray:
    """Values of ``series`` on ``calendar``; gaps filled on the straight line
    between the nearest known points, with time measured in day ordinals.

    Days before the first or after the last known value are held at the
    nearest known value (``edge="hold"``) or left as NaN (``edge="nan"``).
    """
    mask = series.present
    n = int(mask.sum())
    if n == 0:
        raise IngestError(f"{series.name}: all values missing")
    if n < 2:
        raise IngestError(f"{series.name}: need at least two present values to interpolate, got {n}")
    t_known = np.array([d.toordinal() for d, m in zip(series.dates, mask) if m], dtype=np.float64)
    v_known = series.values[mask]
    t = calendar.ordinals

    out = np.full(t.shape, np.nan)
    b = np.searchsorted(t_known, t, side="left")
    exact = (b < n) & (t_known[np.minimum(b, n - 1)] == t)
    out[exact] = v_known[b[exact]]

    inner = ~exact & (b > 0) & (b < n)
    ia = b[inner] - 1
    ib = b[inner]
    t_a, t_b = t_known[ia], t_known[ib]
    v_a, v_b = v_known[ia], v_known[ib]
    out[inner] = v_a + (v_b - v_a) * (t[inner] - t_a) / (t_b - t_a)

    if edge == "hold":
        out[~exact & (b == 0)] = v_known[0]
        out[~exact & (b == n)] = v_known[-1]
    elif edge != "nan":
        raise IngestError(f"unknown edge mode {edge!r}")
    return out


def align(series: Sequence[RawSeries], calendar: TradingCalendar, edge_policy: str = "hold") -> AlignedFrame:
    """Put every series on ``calendar`` as one gap-free frame.

    ``edge_policy="trim"`` shortens the calendar to the span where every
    series has known values on both sides; the trimmed range is recorded in
    ``frame.metadata``.
    """
    if not series:
        raise IngestError("no series to align")
    if edge_policy not in EDGE_POLICIES:
        raise IngestError(f"edge_policy must be one of {EDGE_POLICIES}, got {edge_policy!r}")
    first, last = calendar.days[0], calendar.days[-1]
    for s in series:
        known = [d for d, m in zip(s.dates, s.present) if m]
        if not known or known[-1] < first or known[0] > last:
            raise IngestError(f"{s.name}: known values do not overlap the calendar {first}..{last}")

    rows = np.vstack([interpolate_linear(s, calendar, edge="nan") for s in series])
    metadata = {"edge_policy": edge_policy, "source_days": len(calendar)}
    if edge_policy == "hold":
        rows = np.vstack([interpolate_linear(s, calendar, edge="hold") for s in series])
        return AlignedFrame(calendar, [s.name for s in series], rows, metadata)

    complete = ~np.isnan(rows).any(axis=0)
    if not complete.any():
        raise IngestError("series have no common span on the calendar")
    cols = np.flatnonzero(complete)
    start, stop = int(cols[0]), int(cols[-1]) + 1
    metadata.update(
        trimmed_start=calendar.days[start].isoformat(),
        trimmed_end=calendar.days[stop - 1].isoformat(),
        trimmed_days=len(calendar) - (stop - start),
    )
    return AlignedFrame(calendar.slice(start, stop), [s.name for s in series], rows[:, start:stop], metadata)


def label_movement(target: Sequence[float]) -> np.ndarray:
    """Next-day direction: 0 if the following value is lower, else 1."""
    cp = np.asarray(target, dtype=np.float64)
    if cp.ndim != 1 or cp.size < 2:
        raise IngestError("movement labels need at least two values")
    return (cp[1:] >= cp[:-1]).astype(np.int64)


def frame_to_csv(frame: AlignedFrame, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *frame.features])
        for j, day in enumerate(frame.calendar.days):
            writer.writerow([day.isoformat(), *(repr(float(v)) for v in frame.values[:, j])])
    return path


def frame_from_csv(path) -> AlignedFrame:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        days, cols = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(f"malformed row on line {line_no}")
            days.append(_parse_date(row[0], line_no))
            cols.append([float(v) for v in row[1:]])
    return AlignedFrame(TradingCalendar(days), header[1:], np.array(cols).T.reshape(len(header) - 1, len(days)))


def frame_to_dict(frame: AlignedFrame) -> dict:
    return {
        "calendar": frame.calendar.iso(),
        "features": list(frame.features),
        "values": frame.values.tolist(),
        "metadata": frame.metadata,
    }


def frame_from_dict(doc: dict) -> AlignedFrame:
    return AlignedFrame(TradingCalendar(doc["calendar"]), doc["features"], np.array(doc["values"], dtype=np.float64),
                        dict(doc.get("metadata", {})))


def write_json(doc, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def series_to_csv(dates: Iterable[dt.date], values: Iterable[float], path, value_column="value") -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", value_column])
        for d, v in zip(dates, values):
            writer.writerow([d.isoformat(), "" if v is None or np.isnan(v) else repr(float(v))])
    return path
