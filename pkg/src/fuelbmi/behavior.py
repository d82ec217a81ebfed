"""Observation windows, daily behaviour vectors and routine baselines."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import APPLIANCES, BMIError, DetectionEvent

BASELINE_FORMAT = 1

DEFAULT_WINDOWS = (
    ("Night", 0, 6),
    ("Breakfast", 6, 9),
    ("Morning", 9, 12),
    ("Lunch", 12, 14),
    ("Afternoon", 14, 17),
    ("Dinner", 17, 20),
    ("Evening", 20, 24),
)


class InvalidWindowSet(BMIError):
    pass


class InsufficientHistory(BMIError):
    pass


@dataclass(frozen=True)
class ObservationWindow:
    name: str
    start_hour: float
    end_hour: float

    def __post_init__(self):
        if not self.start_hour < self.end_hour:
            raise InvalidWindowSet(f"window {self.name}: start must precede end")

    def contains(self, hour: float) -> bool:
        return self.start_hour <= hour < self.end_hour

    @property
    def length(self) -> float:
        return self.end_hour - self.start_hour


def default_windows() -> tuple[ObservationWindow, ...]:
    return tuple(ObservationWindow(*w) for w in DEFAULT_WINDOWS)


def validate_windows(windows: Sequence[ObservationWindow]) -> tuple[ObservationWindow, ...]:
    """Return the windows sorted by start, or raise if they do not tile [0, 24)."""
    ws = tuple(sorted(windows, key=lambda w: w.start_hour))
    if not ws:
        raise InvalidWindowSet("empty window set")
    if len({w.name for w in ws}) != len(ws):
        raise InvalidWindowSet("duplicate window names")
    if ws[0].start_hour != 0 or ws[-1].end_hour != 24:
        raise InvalidWindowSet("windows must cover 00:00 to 24:00")
    for a, b in zip(ws, ws[1:]):
        if a.end_hour != b.start_hour:
            raise InvalidWindowSet(f"{a.name} and {b.name} overlap or leave a gap")
    return ws


def window_for(windows: Sequence[ObservationWindow], hour: float) -> ObservationWindow:
    for w in windows:
        if w.contains(hour):
            return w
    raise InvalidWindowSet(f"no window contains hour {hour}")


def utc_date(ts: int) -> dt.date:
    return dt.datetime.fromtimestamp(int(ts), tz=dt.timezone.utc).date()


def hour_of_day(ts: int) -> float:
    return (int(ts) % 86400) / 3600.0


def day_start_ts(date: dt.date) -> int:
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp())


@dataclass
class BehaviorVector:
    pid: str
    date: dt.date
    counts: dict[tuple[str, str], int]
    event_hours: dict[str, list[float]] = field(default_factory=dict)

    def total(self, appliance: str) -> int:
        return sum(n for (a, _), n in self.counts.items() if a == appliance)


def _empty_vector(pid, date, windows, appliances) -> BehaviorVector:
    counts = {(a, w.name): 0 for a in appliances for w in windows}
    return BehaviorVector(pid, date, counts, {a: [] for a in appliances})


def assign_detections(events: Iterable[DetectionEvent], windows: Sequence[ObservationWindow],
                      pid: str | None = None, dates: Iterable[dt.date] = (),
                      appliances: Sequence[str] = APPLIANCES) -> dict[tuple[str, dt.date], BehaviorVector]:
    """Bucket events into per-day behaviour vectors by start time.

    Days listed in ``dates`` get a vector even if nothing happened on them
    (needs ``pid``); an event spanning midnight counts on its start date.
    """
    windows = validate_windows(windows)
    out: dict[tuple[str, dt.date], BehaviorVector] = {}
    if pid is not None:
        for d in dates:
            out[(pid, d)] = _empty_vector(pid, d, windows, appliances)
    for ev in sorted(events, key=lambda e: (e.start_ts, sorted(e.appliances))):
        date = utc_date(ev.start_ts)
        hour = hour_of_day(ev.start_ts)
        key = (ev.pid, date)
        vec = out.get(key)
        if vec is None:
            vec = out[key] = _empty_vector(ev.pid, date, windows, appliances)
        win = window_for(windows, hour)
        for a in sorted(ev.appliances):
            vec.counts[(a, win.name)] += 1
            vec.event_hours[a].append(hour)
    return dict(sorted(out.items()))


def circular_hour_stats(hours: Sequence[float]) -> tuple[float, float] | None:
    """Circular mean and standard deviation of hours of day (in hours)."""
    if len(hours) == 0:
        return None
    ang = np.asarray(hours, dtype=float) * (2 * math.pi / 24.0)
    c, s = np.cos(ang).mean(), np.sin(ang).mean()
    mean = (math.atan2(s, c) % (2 * math.pi)) * 24.0 / (2 * math.pi)
    r = min(1.0, math.hypot(c, s))
    std = 0.0 if r >= 1.0 else math.sqrt(-2.0 * math.log(max(r, 1e-300))) * 24.0 / (2 * math.pi)
    if mean >= 24.0:
        mean -= 24.0
    return mean, std


@dataclass
class RoutineBaseline:
    pid: str
    windows: tuple[ObservationWindow, ...]
    cells: dict[tuple[str, str], tuple[float, float]]
    hours: dict[str, tuple[float, float] | None]
    learning_days: int
    first_date: dt.date
    last_date: dt.date

    def to_dict(self) -> dict:
        return {
            "format": BASELINE_FORMAT,
            "pid": self.pid,
            "learning_days": self.learning_days,
            "first_date": self.first_date.isoformat(),
            "last_date": self.last_date.isoformat(),
            "windows": [[w.name, w.start_hour, w.end_hour] for w in self.windows],
            "cells": [
                {"appliance": a, "window": w, "mean": m, "std": s}
                for (a, w), (m, s) in sorted(self.cells.items())
            ],
            "hours": {
                a: (None if v is None else {"mean": v[0], "std": v[1]})
                for a, v in sorted(self.hours.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoutineBaseline":
        if d.get("format") != BASELINE_FORMAT:
            raise ValueError(f"unsupported baseline format {d.get('format')!r}")
        return cls(
            pid=d["pid"],
            windows=tuple(ObservationWindow(n, s, e) for n, s, e in d["windows"]),
            cells={(c["appliance"], c["window"]): (c["mean"], c["std"]) for c in d["cells"]},
            hours={a: (None if v is None else (v["mean"], v["std"])) for a, v in d["hours"].items()},
            learning_days=d["learning_days"],
            first_date=dt.date.fromisoformat(d["first_date"]),
            last_date=dt.date.fromisoformat(d["last_date"]),
        )


def learn_baseline(vectors: Iterable[BehaviorVector], learning_days: int = 14,
                   windows: Sequence[ObservationWindow] | None = None) -> RoutineBaseline:
    """Per-cell mean and population std of daily counts over the learning days."""
    vectors = sorted(vectors, key=lambda v: v.date)
    dates = {v.date for v in vectors}
    if len(dates) < learning_days or not vectors:
        raise InsufficientHistory(f"{len(dates)} days of history, need {learning_days}")
    pids = {v.pid for v in vectors}
    if len(pids) != 1:
        raise ValueError(f"baseline needs a single household, got {sorted(pids)}")
    if len(dates) != len(vectors):
        raise ValueError("more than one vector per date")
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    keys = sorted(set().union(*(v.counts for v in vectors)))
    for key in keys:
        xs = np.array([v.counts.get(key, 0) for v in vectors], dtype=float)
        cells[key] = (float(xs.mean()), float(xs.std()))
    appliances = sorted({a for a, _ in keys})
    hours = {}
    for a in appliances:
        hs = [h for v in vectors for h in v.event_hours.get(a, [])]
        hours[a] = circular_hour_stats(hs)
    return RoutineBaseline(
        pid=pids.pop(),
        windows=validate_windows(windows or default_windows()),
        cells=cells,
        hours=hours,
        learning_days=len(dates),
        first_date=vectors[0].date,
        last_date=vectors[-1].date,
    )


def device_hour_correlation(events: Iterable[DetectionEvent], days: int,
                            appliances: Sequence[str] = APPLIANCES) -> tuple[list[str], np.ndarray]:
    """Fraction of days on which each appliance started at least once in each hour.

    Returns the row labels and an ``(appliances, 24)`` matrix.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    rows = list(appliances)
    index = {a: i for i, a in enumerate(rows)}
    seen: set[tuple[int, int, dt.date]] = set()
    for ev in events:
        h = int(hour_of_day(ev.start_ts))
        d = utc_date(ev.start_ts)
        for a in ev.appliances:
            if a in index:
                seen.add((index[a], h, d))
    mat = np.zeros((len(rows), 24))
    for i, h, _ in seen:
        mat[i, h] += 1
    return rows, mat / days
