"""Z-score scoring, the traffic-light status machine, Apriori association
rules and region summaries."""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .behavior import BehaviorVector, RoutineBaseline, day_start_ts
from .core import BMIError


class BaselineMissing(BMIError):
    pass


class EmptyRegion(BMIError):
    pass


class Status(str, enum.Enum):
    GREEN = "green"
    AMBER = "amber"
    RED = "red"


@dataclass(frozen=True)
class AnomalyScore:
    pid: str
    date: dt.date
    appliance: str
    window: str
    observed: int
    z: float
    is_outlier: bool

    def to_dict(self) -> dict:
        z = self.z if math.isfinite(self.z) else ("inf" if self.z > 0 else "-inf")
        return {"pid": self.pid, "date": self.date.isoformat(), "appliance": self.appliance,
                "window": self.window, "observed": self.observed, "z": z,
                "is_outlier": self.is_outlier}

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyScore":
        return cls(d["pid"], dt.date.fromisoformat(d["date"]), d["appliance"], d["window"],
                   d["observed"], float(d["z"]), d["is_outlier"])


def zscore_day(vector: BehaviorVector, baseline: RoutineBaseline,
               z_threshold: float = 3.0) -> list[AnomalyScore]:
    """Score every (appliance, window) count of one day against the baseline.

    A zero-variance cell scores 0 when the count matches its mean and an
    infinite z (signed by the direction of the change) otherwise.
    """
    if vector.pid != baseline.pid:
        raise BaselineMissing(f"baseline is for {baseline.pid!r}, vector for {vector.pid!r}")
    out = []
    for key in sorted(vector.counts):
        if key not in baseline.cells:
            raise BaselineMissing(f"no baseline for {key[0]}@{key[1]}")
        mean, std = baseline.cells[key]
        count = vector.counts[key]
        if std > 0:
            z = (count - mean) / std
        elif count == mean:
            z = 0.0
        else:
            z = math.inf if count > mean else -math.inf
        out.append(AnomalyScore(vector.pid, vector.date, key[0], key[1], count, z,
                                abs(z) > z_threshold))
    return out


@dataclass(frozen=True)
class TrafficLightConfig:
    amber_min_outliers: int = 1
    red_days: int = 7

    def __post_init__(self):
        if self.amber_min_outliers < 1 or self.red_days < 1:
            raise ValueError("amber_min_outliers and red_days must be >= 1")


@dataclass(frozen=True)
class TrafficLightStatus:
    pid: str
    date: dt.date | None
    status: Status = Status.GREEN
    consecutive_anomalous_days: int = 0
    reasons: tuple[AnomalyScore, ...] = ()

    @classmethod
    def initial(cls, pid: str) -> "TrafficLightStatus":
        return cls(pid, None)

    def to_dict(self) -> dict:
        return {"pid": self.pid, "date": self.date.isoformat() if self.date else None,
                "status": self.status.value,
                "consecutive_anomalous_days": self.consecutive_anomalous_days,
                "reasons": [r.to_dict() for r in self.reasons]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficLightStatus":
        return cls(d["pid"], dt.date.fromisoformat(d["date"]) if d["date"] else None,
                   Status(d["status"]), d["consecutive_anomalous_days"],
                   tuple(AnomalyScore.from_dict(r) for r in d["reasons"]))


def update_traffic_light(prev: TrafficLightStatus, today: Sequence[AnomalyScore],
                         cfg: TrafficLightConfig = TrafficLightConfig(),
                         date: dt.date | None = None) -> TrafficLightStatus:
    """Advance the status by one day.

    A day is anomalous when it has at least ``amber_min_outliers`` outliers.
    Anomalous days extend the run (Amber, then Red once the run reaches
    ``red_days``); a quiet day resets to Green.
    """
    outliers = tuple(s for s in today if s.is_outlier)
    if date is None:
        date = today[0].date if today else prev.date
    if len(outliers) < cfg.amber_min_outliers:
        return TrafficLightStatus(prev.pid, date, Status.GREEN, 0, ())
    run = prev.consecutive_anomalous_days + 1
    status = Status.RED if run >= cfg.red_days else Status.AMBER
    return TrafficLightStatus(prev.pid, date, status, run, outliers)


@dataclass(frozen=True)
class AlertRecord:
    pid: str
    ts: int
    status: Status
    previous_status: Status
    reasons: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"pid": self.pid, "ts": self.ts, "status": self.status.value,
                "previous_status": self.previous_status.value, "reasons": list(self.reasons)}


def alerts_for(history: Sequence[TrafficLightStatus], start: Status = Status.GREEN,
               top: int = 3) -> list[AlertRecord]:
    """One alert per status change along a daily status sequence."""
    out = []
    prev = start
    for st in history:
        if st.status != prev:
            cells = sorted(st.reasons, key=lambda r: -abs(r.z))[:top]
            reasons = tuple(f"{r.appliance}@{r.window}: {r.observed} (z={r.z:.2f})" for r in cells)
            ts = day_start_ts(st.date) + 86399 if st.date else 0
            out.append(AlertRecord(st.pid, ts, st.status, prev, reasons))
        prev = st.status
    return out


# -- association rules ----------------------------------------------------------

@dataclass(frozen=True)
class AssociationRule:
    antecedent: frozenset[str]
    consequent: frozenset[str]
    support: float
    confidence: float
    lift: float

    @property
    def key(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return tuple(sorted(self.antecedent)), tuple(sorted(self.consequent))

    def to_dict(self) -> dict:
        a, c = self.key
        return {"antecedent": list(a), "consequent": list(c), "support": self.support,
                "confidence": self.confidence, "lift": self.lift}

    @classmethod
    def from_dict(cls, d: dict) -> "AssociationRule":
        return cls(frozenset(d["antecedent"]), frozenset(d["consequent"]),
                   d["support"], d["confidence"], d["lift"])

    def __str__(self):
        a, c = self.key
        return f"{{{', '.join(a)}}} -> {{{', '.join(c)}}}"


def frequent_itemsets(transactions: Sequence[frozenset[str]], min_support: float) -> dict[frozenset[str], float]:
    """Apriori: grow candidates level by level, pruning any with an infrequent subset."""
    n = len(transactions)
    if n == 0:
        return {}
    items = sorted({i for t in transactions for i in t})
    level = [frozenset([i]) for i in items]
    out: dict[frozenset[str], float] = {}
    k = 1
    while level:
        counts = {c: 0 for c in level}
        for t in transactions:
            for c in level:
                if c <= t:
                    counts[c] += 1
        frequent = {c: counts[c] / n for c in level if counts[c] / n >= min_support}
        out.update(frequent)
        k += 1
        prev = sorted(frequent, key=sorted)
        cand = set()
        for a, b in combinations(prev, 2):
            u = a | b
            if len(u) == k and all(frozenset(s) in frequent for s in combinations(u, k - 1)):
                cand.add(u)
        level = sorted(cand, key=sorted)
    return out


def mine_rules(transactions: Iterable[Iterable[str]], min_support: float,
               min_confidence: float) -> list[AssociationRule]:
    if not (0 < min_support <= 1 and 0 < min_confidence <= 1):
        raise ValueError("thresholds must lie in (0, 1]")
    txs = [frozenset(t) for t in transactions]
    freq = frequent_itemsets(txs, min_support)
    n = len(txs)

    def support(s):
        if s in freq:
            return freq[s]
        return sum(1 for t in txs if s <= t) / n

    rules = []
    for itemset, sup in freq.items():
        if len(itemset) < 2:
            continue
        members = sorted(itemset)
        for r in range(1, len(members)):
            for ante in combinations(members, r):
                a = frozenset(ante)
                c = itemset - a
                conf = sup / freq[a]
                if conf >= min_confidence:
                    rules.append(AssociationRule(a, c, sup, conf, conf / support(c)))
    rules.sort(key=lambda r: (-r.support, -r.confidence, r.key))
    return rules


def transactions_from_vectors(vectors: Iterable[BehaviorVector]) -> list[frozenset[str]]:
    """One item set per (household, day): ``appliance@window`` for every non-zero count."""
    ordered = sorted(vectors, key=lambda v: (v.pid, v.date))
    return [frozenset(f"{a}@{w}" for (a, w), n in v.counts.items() if n > 0) for v in ordered]


@dataclass
class RegionSummary:
    region: str
    households: int
    histogram: dict[str, int]
    drifted: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"region": self.region, "households": self.households,
                "histogram": dict(self.histogram), "drifted_rules": list(self.drifted)}


def region_aggregate(statuses: Mapping[str, TrafficLightStatus] | Sequence[TrafficLightStatus],
                     rules_before: Sequence[AssociationRule] = (),
                     rules_after: Sequence[AssociationRule] = (),
                     drift_threshold: float = 0.2, region: str = "") -> RegionSummary:
    """Status histogram of a region plus rules whose support moved by >= the threshold.

    A rule absent from one period counts as support 0 there.
    """
    items = list(statuses.values()) if isinstance(statuses, Mapping) else list(statuses)
    if not items:
        raise EmptyRegion(f"region {region!r} has no households")
    hist = {s.value: 0 for s in Status}
    for st in items:
        hist[st.status.value] += 1
    before = {r.key: r for r in rules_before}
    after = {r.key: r for r in rules_after}
    drifted = []
    for key in sorted(set(before) | set(after)):
        s0 = before[key].support if key in before else 0.0
        s1 = after[key].support if key in after else 0.0
        if abs(s1 - s0) >= drift_threshold - 1e-12:
            drifted.append({"antecedent": list(key[0]), "consequent": list(key[1]),
                            "support_before": s0, "support_after": s1, "change": s1 - s0})
    return RegionSummary(region, len(items), hist, drifted)
