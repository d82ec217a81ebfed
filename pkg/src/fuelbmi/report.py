"""Report emission: CSV tables next to PNG figures in ``paths.report_dir``."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from . import plotting
from .anomaly import TrafficLightStatus, mine_rules, region_aggregate
from .behavior import device_hour_correlation, hour_of_day, utc_date, window_for
from .cnn import EpochRecord
from .config import RunConfig
from .core import APPLIANCES
from .indicators import compare, lihc, read_population, weights_from_table, write_verdicts
from .pipeline import (
    DataDir,
    atomic_write_text,
    latest_statuses,
    read_events,
    read_json,
    read_status_doc,
)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_history_csv(path: Path) -> list[EpochRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        return []
    out = []
    for row in list(csv.reader(io.StringIO(text)))[1:]:
        out.append(EpochRecord(int(row[0]), *map(float, row[1:])))
    return out


def indicator_table(cfg: RunConfig, population_path: Path, statuses: dict | None = None):
    """Verdict CSV and, when statuses cover the same households, the agreement table."""
    with open(population_path, encoding="utf-8") as fh:
        population = read_population(fh)
    weights = weights_from_table(cfg["indicators.weights"], cfg["indicators.extra_per_person"])
    verdicts = lihc(population, weights, cfg["indicators.income_fraction"])
    agreement = None
    if statuses is not None and {v.pid for v in verdicts} == set(statuses):
        agreement = compare(verdicts, {p: s.status.value for p, s in statuses.items()})
    return verdicts, agreement


def write_report(cfg: RunConfig, out_dir: Path | None = None) -> list[Path]:
    """Write every table and figure the data directory supports; returns the paths."""
    data = DataDir(cfg.data_dir)
    out = Path(out_dir or cfg.report_dir)
    written: list[Path] = []

    def put(name: str, text: str):
        p = out / name
        atomic_write_text(p, text)
        written.append(p)

    history = read_history_csv(data.training_history)
    if history:
        put("training_history.csv", data.training_history.read_text(encoding="utf-8"))
        written.append(plotting.training_curves(history, out / "training_curves.png"))
    report = read_json(data.training_report)
    if report:
        rows = [(c, m["support"], m["precision"], m["recall"]) for c, m in report["per_class"].items()]
        put("per_class_metrics.csv", _csv(rows, ["class", "support", "precision", "recall"]))

    doc = read_status_doc(data)
    households = doc["households"]
    status_rows, timelines = [], {}
    for pid, entry in households.items():
        timelines[pid] = []
        for h in entry.get("history", []):
            st = TrafficLightStatus.from_dict(h)
            status_rows.append((pid, entry.get("region"), st.date.isoformat(), st.status.value,
                                st.consecutive_anomalous_days, len(st.reasons)))
            timelines[pid].append((st.date, st.status.value))
    if households:
        put("statuses.csv", _csv(status_rows, ["pid", "region", "date", "status",
                                               "consecutive_anomalous_days", "outliers"]))
        written.append(plotting.status_timeline(timelines, out / "status_timeline.png"))
    alerts = read_json(data.alerts) or []
    if alerts:
        put("alerts.csv", _csv([(a["pid"], a["ts"], a["previous_status"], a["status"],
                                 "; ".join(a["reasons"])) for a in alerts],
                               ["pid", "ts", "previous_status", "status", "reasons"]))

    windows = cfg.windows()
    for pid in data.pids("events"):
        events = read_events(data.events(pid))
        if not events:
            continue
        days = (utc_date(events[-1].start_ts) - utc_date(events[0].start_ts)).days + 1
        rows, mat = device_hour_correlation(events, days, APPLIANCES)
        put(f"device_hour_{pid}.csv",
            _csv([[a] + [f"{v:.4f}" for v in mat[i]] for i, a in enumerate(rows)],
                 ["appliance"] + [str(h) for h in range(24)]))
        written.append(plotting.device_hour_heatmap(
            rows, mat, f"{pid}: share of days with a start in each hour", out / f"device_hour_{pid}.png"))
        flagged = set()
        for h in households.get(pid, {}).get("history", []):
            for r in h["reasons"]:
                flagged.add((r["date"], r["appliance"], r["window"]))
        points = []
        for e in events:
            hr = hour_of_day(e.start_ts)
            d = utc_date(e.start_ts)
            win = window_for(windows, hr).name
            points.append((d, hr, e.appliance, (d.isoformat(), e.appliance, win) in flagged))
        written.append(plotting.event_hours(points, out / f"event_hours_{pid}.png",
                                            f"{pid}: detected events"))

    regions: dict[str, dict] = {}
    for pid, entry in households.items():
        regions.setdefault(entry.get("region"), {})[pid] = entry
    ms, mc = cfg["rules.min_support"], cfg["rules.min_confidence"]
    region_rows, rule_rows = [], []
    for region, members in sorted(regions.items()):
        before = [t for e in members.values() for t in e.get("baseline_transactions", [])]
        after = [t for e in members.values() for t in e.get("recent_transactions", [])]
        rb = mine_rules(before, ms, mc) if before else []
        ra = mine_rules(after, ms, mc) if after else []
        summary = region_aggregate(latest_statuses({"households": members}), rb, ra,
                                   cfg["rules.drift_threshold"], region)
        h = summary.histogram
        region_rows.append((region, summary.households, h["green"], h["amber"], h["red"],
                            len(summary.drifted)))
        for period, rules in (("baseline", rb), ("recent", ra)):
            for r in rules:
                a, c = r.key
                rule_rows.append((region, period, " & ".join(a), " & ".join(c),
                                  f"{r.support:.4f}", f"{r.confidence:.4f}", f"{r.lift:.4f}"))
    if region_rows:
        put("regions.csv", _csv(region_rows, ["region", "households", "green", "amber", "red",
                                              "drifted_rules"]))
        put("rules.csv", _csv(rule_rows, ["region", "period", "antecedent", "consequent",
                                          "support", "confidence", "lift"]))

    if cfg["paths.population"]:
        latest = latest_statuses(doc) if households else None
        verdicts, agreement = indicator_table(cfg, Path(cfg["paths.population"]), latest)
        put("indicators.csv", write_verdicts(verdicts))
        if agreement:
            put("indicator_agreement.csv", _csv(
                [(k, c.both, c.indicator_only, c.bmi_only, c.neither, f"{c.agreement:.4f}")
                 for k, c in agreement.items()],
                ["indicator", "both", "indicator_only", "red_only", "neither", "agreement"]))
    return written
