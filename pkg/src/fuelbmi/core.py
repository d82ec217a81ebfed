"""Shared value types, reading-stream parsing and the on-disk text formats.

Readings file: ``pid,ts,watts`` per line, UTF-8, LF-terminated, no header.
Annotation file: ``pid,appliance,action,ts`` with action ``on`` or ``off``.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

APPLIANCES = ("Kettle", "Microwave", "Oven", "Toaster", "WashingMachine")
BACKGROUND = "Background"


class BMIError(Exception):
    """Base class for all pipeline errors."""


class MalformedLine(BMIError):
    def __init__(self, lineno: int, content: str, reason: str = ""):
        self.lineno = lineno
        self.content = content
        msg = f"line {lineno}: {content!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class MixedMeter(BMIError):
    pass


class UnknownAppliance(BMIError):
    pass


class DeviceType(enum.Enum):
    TYPE1 = "Type1"  # on/off
    TYPE2 = "Type2"  # multi-state
    TYPE3 = "Type3"  # continuously variable
    TYPE4 = "Type4"  # always on

    @classmethod
    def parse(cls, text: str) -> "DeviceType":
        key = text.strip().lower().replace("type", "")
        for member in cls:
            if member.value.lower().replace("type", "") == key:
                return member
        raise ValueError(f"unknown device type {text!r}")


@dataclass(frozen=True, order=True)
class ApplianceClass:
    """A (possibly composite) appliance label.

    ``members`` is kept sorted and duplicate free, so two classes built from
    the same set compare equal. The empty set is the Background class.
    """

    members: tuple[str, ...] = ()

    def __post_init__(self):
        for m in self.members:
            if m not in APPLIANCES:
                raise UnknownAppliance(m)
        canon = tuple(sorted(set(self.members)))
        object.__setattr__(self, "members", canon)

    @classmethod
    def of(cls, *names: str) -> "ApplianceClass":
        return cls(tuple(names))

    @classmethod
    def background(cls) -> "ApplianceClass":
        return cls(())

    @classmethod
    def decode(cls, label: str) -> "ApplianceClass":
        label = label.strip()
        if label == BACKGROUND:
            return cls(())
        parts = label.split("+")
        if len(set(parts)) != len(parts):
            raise UnknownAppliance(label)
        return cls(tuple(parts))

    def encode(self) -> str:
        return "+".join(self.members) if self.members else BACKGROUND

    @property
    def label(self) -> str:
        return self.encode()

    @property
    def is_background(self) -> bool:
        return not self.members

    @property
    def is_composite(self) -> bool:
        return len(self.members) > 1

    def appliances(self) -> frozenset[str]:
        return frozenset(self.members)

    def __str__(self) -> str:
        return self.encode()


def label_space(max_combo: int = 3, appliances: Sequence[str] = APPLIANCES) -> list[ApplianceClass]:
    """Singletons, then every combination up to ``max_combo``, then Background."""
    out = []
    for k in range(1, max_combo + 1):
        out.extend(ApplianceClass(c) for c in combinations(sorted(appliances), k))
    out.append(ApplianceClass.background())
    return out


@dataclass(frozen=True, order=True)
class MeterReading:
    pid: str
    ts: int
    watts: int

    def __post_init__(self):
        if not self.pid:
            raise ValueError("pid must be non-empty")
        if self.ts < 0:
            raise ValueError("ts must be >= 0")
        if self.watts < 0:
            raise ValueError("watts must be >= 0")


class ValidatedStream:
    """A single meter's readings, sorted with unique timestamps.

    Samples are held as two int64 arrays; ``readings`` materialises the
    MeterReading view on demand.
    """

    __slots__ = ("pid", "ts", "watts", "gaps", "cadence_s")

    def __init__(self, pid: str, ts, watts, gaps=(), cadence_s: int = 10):
        ts = np.asarray(ts, dtype=np.int64)
        watts = np.asarray(watts, dtype=np.int64)
        if ts.shape != watts.shape or ts.ndim != 1:
            raise ValueError("ts and watts must be 1-D arrays of equal length")
        if len(ts) and not pid:
            raise ValueError("pid must be non-empty")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(watts < 0):
            raise ValueError("watts must be >= 0")
        ts.flags.writeable = False
        watts.flags.writeable = False
        self.pid = pid
        self.ts = ts
        self.watts = watts
        self.gaps = tuple((int(a), int(b)) for a, b in gaps)
        self.cadence_s = int(cadence_s)

    def __len__(self):
        return len(self.ts)

    def __eq__(self, other):
        if not isinstance(other, ValidatedStream):
            return NotImplemented
        return (self.pid == other.pid and self.gaps == other.gaps
                and self.cadence_s == other.cadence_s
                and np.array_equal(self.ts, other.ts)
                and np.array_equal(self.watts, other.watts))

    def __repr__(self):
        return f"ValidatedStream(pid={self.pid!r}, n={len(self)}, gaps={len(self.gaps)})"

    @property
    def readings(self) -> list[MeterReading]:
        return [MeterReading(self.pid, int(t), int(w)) for t, w in zip(self.ts, self.watts)]

    def with_watts(self, watts) -> "ValidatedStream":
        return ValidatedStream(self.pid, self.ts, watts, self.gaps, self.cadence_s)

    def slice_ts(self, start_ts: int, end_ts: int) -> "ValidatedStream":
        """Samples with start_ts <= ts < end_ts; gaps clipped to the range."""
        lo, hi = np.searchsorted(self.ts, [start_ts, end_ts])
        gaps = [(a, b) for a, b in self.gaps if b > start_ts and a < end_ts]
        return ValidatedStream(self.pid, self.ts[lo:hi], self.watts[lo:hi], gaps, self.cadence_s)


@dataclass(frozen=True)
class DetectionEvent:
    pid: str
    appliances: frozenset[str]
    start_ts: int
    end_ts: int
    confidence: float

    def __post_init__(self):
        if not self.appliances:
            raise ValueError("appliances must be non-empty")
        if self.start_ts >= self.end_ts:
            raise ValueError("start_ts must precede end_ts")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")

    @property
    def appliance(self) -> str:
        """The single appliance of a decoded (one-per-appliance) event."""
        if len(self.appliances) != 1:
            raise ValueError("event covers several appliances")
        return next(iter(self.appliances))


@dataclass(frozen=True)
class Annotation:
    pid: str
    appliance: str
    action: str
    ts: int

    def __post_init__(self):
        if self.appliance not in APPLIANCES:
            raise UnknownAppliance(self.appliance)
        if self.action not in ("on", "off"):
            raise ValueError(f"bad action {self.action!r}")


# -- readings format ---------------------------------------------------------

def _lines(source) -> Iterator[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, str):
        source = io.StringIO(source)
    for raw in source:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw.rstrip("\n").rstrip("\r")


def _parse_int(text: str) -> int:
    text = text.strip()
    # int() accepts "1_000" and surrounding "+"; the format does not
    if not text or not (text.isdigit() or (text[0] == "-" and text[1:].isdigit())):
        raise ValueError(text)
    return int(text)


def parse_reading_stream(source) -> list[MeterReading]:
    """Parse ``pid,ts,watts`` lines. Blank lines are skipped."""
    out = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise MalformedLine(lineno, line, "expected 3 fields")
        pid = fields[0].strip()
        try:
            ts = _parse_int(fields[1])
            watts = _parse_int(fields[2])
        except ValueError:
            raise MalformedLine(lineno, line, "non-integer field") from None
        if not pid:
            raise MalformedLine(lineno, line, "empty pid")
        if watts < 0:
            raise MalformedLine(lineno, line, "negative watts")
        if ts < 0:
            raise MalformedLine(lineno, line, "negative timestamp")
        out.append(MeterReading(pid, ts, watts))
    return out


def serialize_readings(readings: Iterable[MeterReading]) -> str:
    return "".join(f"{r.pid},{r.ts},{r.watts}\n" for r in readings)


def write_readings(readings: Iterable[MeterReading], fh: TextIO) -> None:
    fh.write(serialize_readings(readings))


def parse_annotations(source) -> list[Annotation]:
    out = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise MalformedLine(lineno, line, "expected 4 fields")
        pid, appliance, action, ts = (f.strip() for f in fields)
        try:
            out.append(Annotation(pid, appliance, action, _parse_int(ts)))
        except (ValueError, UnknownAppliance) as exc:
            raise MalformedLine(lineno, line, str(exc)) from None
    return out


def serialize_annotations(rows: Iterable[Annotation]) -> str:
    return "".join(f"{a.pid},{a.appliance},{a.action},{a.ts}\n" for a in rows)


def split_by_pid(readings: Iterable[MeterReading]) -> dict[str, list[MeterReading]]:
    groups: dict[str, list[MeterReading]] = {}
    for r in readings:
        groups.setdefault(r.pid, []).append(r)
    return groups


def normalize_stream(readings: Sequence[MeterReading], cadence_s: int = 10,
                     gap_tolerance_s: int = 30) -> ValidatedStream:
    """Sort, collapse duplicate timestamps (last value wins) and record gaps.

    Nothing is interpolated: a gap is any step between consecutive samples
    larger than ``gap_tolerance_s``.
    """
    pids = {r.pid for r in readings}
    if len(pids) > 1:
        raise MixedMeter(f"multiple meters in one stream: {sorted(pids)}")
    if not readings:
        return ValidatedStream("", [], [], (), cadence_s)
    pid = pids.pop()
    latest: dict[int, int] = {}
    for r in readings:  # input order decides which duplicate is "last"
        latest[r.ts] = r.watts
    ts = np.array(sorted(latest), dtype=np.int64)
    watts = np.array([latest[t] for t in ts.tolist()], dtype=np.int64)
    return ValidatedStream(pid, ts, watts, find_gaps(ts, gap_tolerance_s), cadence_s)


def find_gaps(ts, gap_tolerance_s: int) -> list[tuple[int, int]]:
    ts = np.asarray(ts)
    idx = np.flatnonzero(np.diff(ts) > gap_tolerance_s)
    return [(int(ts[i]), int(ts[i + 1])) for i in idx]


def normalize_validated(stream: ValidatedStream, gap_tolerance_s: int = 30) -> ValidatedStream:
    """Re-run normalisation on an already validated stream (cheap path)."""
    return ValidatedStream(stream.pid, stream.ts, stream.watts,
                           find_gaps(stream.ts, gap_tolerance_s), stream.cadence_s)


@dataclass
class Activation:
    """A paired on/off annotation interval."""

    pid: str
    appliance: str
    on_ts: int
    off_ts: int
    ident: str = field(default="")


class UnpairedAnnotation(BMIError):
    pass


def pair_annotations(rows: Iterable[Annotation]) -> list[Activation]:
    """Pair each ``on`` with the next ``off`` of the same appliance and meter."""
    rows = sorted(rows, key=lambda a: (a.ts, a.action == "on"))
    open_: dict[tuple[str, str], Annotation] = {}
    out = []
    for a in rows:
        key = (a.pid, a.appliance)
        if a.action == "on":
            if key in open_:
                raise UnpairedAnnotation(f"{a.appliance} switched on twice at {a.ts}")
            open_[key] = a
        else:
            on = open_.pop(key, None)
            if on is None:
                raise UnpairedAnnotation(f"{a.appliance} off at {a.ts} without on")
            if a.ts <= on.ts:
                raise UnpairedAnnotation(f"{a.appliance} off at {a.ts} not after on")
            out.append(Activation(a.pid, a.appliance, on.ts, a.ts))
    if open_:
        (pid, name), on = next(iter(open_.items()))
        raise UnpairedAnnotation(f"{name} on at {on.ts} never switched off")
    out.sort(key=lambda act: (act.on_ts, act.appliance))
    for i, act in enumerate(out):
        act.ident = f"{act.pid}:{act.appliance}:{act.on_ts}"
    return out
