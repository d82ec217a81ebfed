"""Operating modes over a plain-file data directory.

Layout under ``paths.data_dir``::

    readings/<pid>.csv        pid,ts,watts
    annotations/<pid>.csv     pid,appliance,action,ts
    model.ckpt                network checkpoint
    training_report.json      test-split metrics of the last device training
    training_history.csv      per-epoch losses and accuracies
    baselines/<pid>.json      routine baseline per household
    events/<pid>.csv          detected appliance events
    statuses.json             status history, transactions and region per household
    alerts.json               alert records (status transitions)

Every file is published whole via write-then-rename.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import cnn
from .anomaly import (
    AlertRecord,
    Status,
    TrafficLightConfig,
    TrafficLightStatus,
    alerts_for,
    transactions_from_vectors,
    update_traffic_light,
    zscore_day,
)
from .behavior import (
    BehaviorVector,
    InsufficientHistory,
    RoutineBaseline,
    assign_detections,
    day_start_ts,
    learn_baseline,
    utc_date,
)
from .config import RunConfig
from .core import (
    APPLIANCES,
    BMIError,
    DetectionEvent,
    ValidatedStream,
    label_space,
    normalize_stream,
    pair_annotations,
    parse_annotations,
    parse_reading_stream,
    serialize_annotations,
    serialize_readings,
)
from .preprocess import (
    background_signatures,
    build_dataset,
    calibrate_threshold,
    extract_signatures,
    highpass_filter,
    idle_noise_floor,
    remove_baseload,
)
from .simulator import (
    DAY_S,
    ApplianceModel,
    HouseholdProfile,
    Scenario,
    SimulationResult,
    synthesize,
)

log = logging.getLogger(__name__)

STATUS_FORMAT = 1
_append_lock = threading.Lock()


class StageError(BMIError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class MissingModel(BMIError):
    pass


class MissingBaseline(BMIError):
    pass


# -- file helpers ---------------------------------------------------------------

def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def atomic_write_json(path: Path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path: Path, default=None):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        return default


@dataclass
class DataDir:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def readings(self, pid: str) -> Path:
        return self.root / "readings" / f"{pid}.csv"

    def annotations(self, pid: str) -> Path:
        return self.root / "annotations" / f"{pid}.csv"

    def baseline(self, pid: str) -> Path:
        return self.root / "baselines" / f"{pid}.json"

    def events(self, pid: str) -> Path:
        return self.root / "events" / f"{pid}.csv"

    @property
    def checkpoint(self) -> Path:
        return self.root / "model.ckpt"

    @property
    def statuses(self) -> Path:
        return self.root / "statuses.json"

    @property
    def alerts(self) -> Path:
        return self.root / "alerts.json"

    @property
    def training_report(self) -> Path:
        return self.root / "training_report.json"

    @property
    def training_history(self) -> Path:
        return self.root / "training_history.csv"

    def pids(self, kind: str = "readings") -> list[str]:
        d = self.root / kind
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.csv"))

    def append_readings(self, pid: str, text: str) -> None:
        path = self.readings(pid)
        path.parent.mkdir(parents=True, exist_ok=True)
        with _append_lock, open(path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def load_stream(path: Path, cfg: RunConfig) -> ValidatedStream:
    with open(path, "rb") as fh:
        readings = parse_reading_stream(fh)
    return normalize_stream(readings, cfg["cadence_s"], cfg["gap_tolerance_s"])


# -- configuration -> domain objects ---------------------------------------------

def profile_from_config(cfg: RunConfig, pid: str | None = None,
                        tendencies: dict | None = None) -> HouseholdProfile:
    models = [
        ApplianceModel(name, spec.device_type, spec.power_w, spec.duration_s, spec.states,
                       spec.jitter, cfg["cadence_s"])
        for name, spec in sorted(cfg.appliances().items())
    ]
    start = day_start_ts(cfg["sim.start_date"])
    return HouseholdProfile(
        pid=pid or cfg["sim.pid"],
        appliances=models,
        usage_tendencies=cfg.tendencies() if tendencies is None else tendencies,
        noise_floor_w=cfg["sim.noise_floor_w"],
        seed=cfg["seed"],
        windows=cfg.windows(),
        start_ts=start,
        cadence_s=cfg["cadence_s"],
        count_draw=cfg["sim.count_draw"],
    )


def training_profile(cfg: RunConfig, pid: str = "TRAIN") -> HouseholdProfile:
    """A device-training household: every appliance used in every daytime window."""
    t = cfg["dataset.training_tendency"]
    names = [w.name for w in cfg.windows() if w.start_hour >= 6]
    tend = {(a, w): t for a in cfg.appliances() for w in names}
    return profile_from_config(cfg, pid, tend)


def scenario_from_config(cfg: RunConfig) -> Scenario:
    return Scenario(cfg["sim.scenario"], cfg["sim.onset_day"], cfg["sim.magnitude"])


def hyperparameters(cfg: RunConfig) -> cnn.Hyperparameters:
    return cnn.Hyperparameters(
        learning_rate=cfg["cnn.learning_rate"], rate_annealing=cfg["cnn.rate_annealing"],
        rate_decay=cfg["cnn.rate_decay"], momentum_start=cfg["cnn.momentum_start"],
        momentum_ramp=cfg["cnn.momentum_ramp"], momentum_stable=cfg["cnn.momentum_stable"],
        weight_decay=cfg["cnn.weight_decay"], adam_beta2=cfg["cnn.adam_beta2"],
        adam_epsilon=cfg["cnn.adam_epsilon"], epochs=cfg["cnn.epochs"],
        batch_size=cfg["cnn.batch_size"], seed=cfg["seed"],
    )


def architecture(cfg: RunConfig) -> cnn.Architecture:
    return cnn.Architecture(input_len=cfg["segment_len"], kernels=cfg["cnn.kernels"],
                            kernel_len=cfg["cnn.kernel_len"], pool=cfg["cnn.pool"],
                            hidden=tuple(cfg["cnn.hidden"]))


# -- simulate ---------------------------------------------------------------------

def write_simulation(result: SimulationResult, data: DataDir) -> None:
    pid = result.stream.pid
    atomic_write_text(data.readings(pid), serialize_readings(result.stream.readings))
    atomic_write_text(data.annotations(pid), serialize_annotations(result.annotations))


def mode_simulate(cfg: RunConfig, training: bool = False, pid: str | None = None) -> SimulationResult:
    if training:
        profile = training_profile(cfg, pid or "TRAIN")
        result = synthesize(profile, cfg["dataset.training_days"], Scenario.normal(), cfg["seed"])
    else:
        profile = profile_from_config(cfg, pid)
        result = synthesize(profile, cfg["sim.days"], scenario_from_config(cfg), cfg["seed"])
    write_simulation(result, DataDir(cfg.data_dir))
    return result


# -- device training ---------------------------------------------------------------

@dataclass
class TrainingCorpus:
    singletons: list = field(default_factory=list)
    background: list = field(default_factory=list)

    def signatures(self):
        return self.singletons + self.background


def corpus_from_stream(stream: ValidatedStream, annotations, cfg: RunConfig) -> TrainingCorpus:
    acts = pair_annotations(annotations)
    floor = idle_noise_floor(stream, acts)
    sigs = extract_signatures(stream, acts, cfg["dataset.pad_s"], floor, isolated_only=True)
    bg = background_signatures(stream, acts, cfg["segment_len"], cfg["dataset.per_class"],
                               cfg["seed"], cfg["highpass_w"], floor)
    return TrainingCorpus(sigs, bg)


def cap_per_class(signatures, per_class: int, seed: int) -> list:
    """At most ``per_class`` signatures per label, sampled reproducibly."""
    rng = np.random.default_rng([seed, 5])
    by_label: dict = {}
    for s in signatures:
        by_label.setdefault(s.label, []).append(s)
    out = []
    for label in sorted(by_label):
        group = by_label[label]
        keep = sorted(rng.permutation(len(group))[:per_class].tolist())
        out.extend(group[i] for i in keep)
    return out


def dataset_from_corpus(corpus: TrainingCorpus, cfg: RunConfig):
    per_class = cfg["dataset.per_class"]
    sigs = cap_per_class(corpus.singletons, per_class, cfg["seed"])
    bg = cap_per_class(corpus.background, per_class, cfg["seed"])
    max_combo = cfg["dataset.max_combo"]
    # three alignments per draw; each composite class ends up with about per_class segments
    draws = math.ceil(per_class * max(cfg["dataset.ratios"]) / 3)
    present = sorted({s.label.members[0] for s in sigs})
    classes = label_space(min(max_combo, len(present)), present)
    return build_dataset(
        sigs + bg, cfg["segment_len"], cfg["scale_w"], tuple(cfg["dataset.ratios"]), cfg["seed"],
        max_combo=max_combo, composite_draws=draws, classes=classes,
        edge_copies=cfg["dataset.edge_copies"],
    )


def default_dataset(cfg: RunConfig):
    """The synthetic device-training dataset: one simulated training household."""
    profile = training_profile(cfg)
    sim = synthesize(profile, cfg["dataset.training_days"], Scenario.normal(), cfg["seed"])
    return dataset_from_corpus(corpus_from_stream(sim.stream, sim.annotations, cfg), cfg)


def mode_device_training(cfg: RunConfig) -> dict:
    """Extract signatures from every annotated household, train, evaluate, checkpoint."""
    data = DataDir(cfg.data_dir)
    pids = data.pids("annotations")
    if not pids:
        raise StageError("extract_signatures", f"no annotation files under {data.root / 'annotations'}")
    corpus = TrainingCorpus()
    for pid in pids:
        try:
            stream = load_stream(data.readings(pid), cfg)
        except (OSError, BMIError) as exc:
            raise StageError("parse_reading_stream", exc) from exc
        try:
            with open(data.annotations(pid), "rb") as fh:
                rows = parse_annotations(fh)
            part = corpus_from_stream(stream, rows, cfg)
        except (OSError, BMIError, ValueError) as exc:
            raise StageError("extract_signatures", exc) from exc
        corpus.singletons += part.singletons
        corpus.background += part.background
    if not corpus.singletons:
        raise StageError("extract_signatures", "no isolated appliance activations found")
    try:
        split = dataset_from_corpus(corpus, cfg)
    except (BMIError, ValueError) as exc:
        raise StageError("build_dataset", exc) from exc
    model = cnn.build_model(split.classes, architecture(cfg), hyperparameters(cfg), cfg["scale_w"])
    try:
        model, history = cnn.train(model, split)
    except (BMIError, ValueError) as exc:
        raise StageError("train", exc) from exc
    report = cnn.evaluate(model, split, "test")
    report["sizes"] = {"train": len(split.train), "validation": len(split.validation),
                       "test": len(split.test)}
    report["classes"] = [c.encode() for c in split.classes]
    report["history"] = [vars(r) for r in history]
    cnn.save(model, data.checkpoint)
    atomic_write_json(data.training_report, _json_safe(report))
    atomic_write_text(data.training_history, history_csv(history))
    return report


def history_csv(history) -> str:
    lines = ["epoch,train_loss,train_accuracy,val_loss,val_accuracy\n"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss:.6f},{r.train_accuracy:.6f},"
                     f"{r.val_loss:.6f},{r.val_accuracy:.6f}\n")
    return "".join(lines)


def _json_safe(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# -- inference helpers ------------------------------------------------------------

def prepare_stream(stream: ValidatedStream, cfg: RunConfig, baseload_w: float | None = None):
    """Remove the always-on draw and high-pass filter, as for training data."""
    if baseload_w is None:
        baseload_w = calibrate_threshold(stream, cfg["baseload_quantile"]) if len(stream) else 0
    return highpass_filter(remove_baseload(stream, int(baseload_w)), cfg["highpass_w"]), baseload_w


def load_model(data: DataDir) -> cnn.NetworkModel:
    if not data.checkpoint.exists():
        raise MissingModel(f"no checkpoint at {data.checkpoint}; run train-devices first")
    return cnn.load(data.checkpoint)


def events_csv(events: Iterable[DetectionEvent]) -> str:
    lines = ["pid,appliance,start_ts,end_ts,confidence\n"]
    for e in events:
        lines.append(f"{e.pid},{e.appliance},{e.start_ts},{e.end_ts},{e.confidence:.6f}\n")
    return "".join(lines)


def read_events(path: Path) -> list[DetectionEvent]:
    out = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        return out
    for line in text.splitlines()[1:]:
        if line.strip():
            pid, a, s, e, c = line.split(",")
            out.append(DetectionEvent(pid, frozenset([a]), int(s), int(e), float(c)))
    return out


def complete_dates(stream: ValidatedStream) -> list[dt.date]:
    """Dates whose whole day is covered by the stream (first to last sample)."""
    if len(stream) == 0:
        return []
    first, last = int(stream.ts[0]), int(stream.ts[-1])
    d0 = first // DAY_S + (1 if first % DAY_S else 0)
    d1 = (last + stream.cadence_s) // DAY_S
    return [utc_date(d * DAY_S) for d in range(d0, d1)]


def detect_household(model, stream: ValidatedStream, cfg: RunConfig, baseload_w=None):
    prepared, baseload_w = prepare_stream(stream, cfg, baseload_w)
    events = cnn.detect_events(model, prepared, cfg["cnn.confidence_floor"])
    return events, baseload_w


def vectors_for(events, cfg: RunConfig, pid: str, dates) -> dict[dt.date, BehaviorVector]:
    dates = list(dates)
    wanted = set(dates)
    vecs = assign_detections([e for e in events if utc_date(e.start_ts) in wanted],
                             cfg.windows(), pid, dates)
    return {d: v for (_, d), v in vecs.items()}


# -- behavioural training ---------------------------------------------------------

def baseline_to_json(baseline: RoutineBaseline, baseload_w: float) -> dict:
    d = baseline.to_dict()
    d["baseload_w"] = baseload_w
    return d


def mode_behavioural_training(cfg: RunConfig, pids: Iterable[str] | None = None) -> dict[str, RoutineBaseline]:
    data = DataDir(cfg.data_dir)
    model = load_model(data)
    out = {}
    for pid in (list(pids) if pids is not None else data.pids()):
        stream = load_stream(data.readings(pid), cfg)
        days = complete_dates(stream)
        need = cfg["baseline.learning_days"]
        if len(days) < need:
            raise InsufficientHistory(f"{pid}: {len(days)} complete days of readings, need {need}")
        learn = days[:need]
        events, baseload = detect_household(model, stream, cfg)
        vecs = vectors_for(events, cfg, pid, learn)
        baseline = learn_baseline(vecs.values(), need, cfg.windows())
        atomic_write_json(data.baseline(pid), baseline_to_json(baseline, baseload))
        atomic_write_text(data.events(pid), events_csv(events))
        out[pid] = baseline
    return out


def load_baseline(data: DataDir, pid: str) -> tuple[RoutineBaseline, float]:
    d = read_json(data.baseline(pid))
    if d is None:
        raise MissingBaseline(f"no baseline for {pid}; run learn-baseline first")
    return RoutineBaseline.from_dict(d), float(d.get("baseload_w", 0.0))


# -- prediction ---------------------------------------------------------------------

def empty_status_doc() -> dict:
    return {"format": STATUS_FORMAT, "households": {}}


def read_status_doc(data: DataDir) -> dict:
    doc = read_json(data.statuses, None) or empty_status_doc()
    if doc.get("format") != STATUS_FORMAT:
        raise BMIError(f"unsupported status file format {doc.get('format')!r}")
    return doc


@dataclass
class PredictionResult:
    pid: str
    statuses: list[TrafficLightStatus]
    alerts: list[AlertRecord]


def predict_days(baseline: RoutineBaseline, vectors: dict[dt.date, BehaviorVector],
                 prev: TrafficLightStatus, cfg: RunConfig) -> list[TrafficLightStatus]:
    tl = TrafficLightConfig(cfg["anomaly.amber_min_outliers"], cfg["anomaly.red_days"])
    out = []
    for date in sorted(vectors):
        scores = zscore_day(vectors[date], baseline, cfg["anomaly.z_threshold"])
        prev = update_traffic_light(prev, scores, tl, date)
        out.append(prev)
    return out


def mode_prediction(cfg: RunConfig, pids: Iterable[str] | None = None) -> dict[str, PredictionResult]:
    """Score every complete day after the baseline period not scored yet."""
    data = DataDir(cfg.data_dir)
    model = load_model(data)
    doc = read_status_doc(data)
    alerts_doc = read_json(data.alerts, None) or []
    results = {}
    for pid in (list(pids) if pids is not None else data.pids()):
        baseline, baseload = load_baseline(data, pid)
        stream = load_stream(data.readings(pid), cfg)
        entry = doc["households"].setdefault(pid, {"history": [], "region": cfg.region_of(pid)})
        entry["region"] = cfg.region_of(pid)
        history = [TrafficLightStatus.from_dict(h) for h in entry["history"]]
        done = {h.date for h in history}
        todo = [d for d in complete_dates(stream) if d > baseline.last_date and d not in done]
        events, _ = detect_household(model, stream, cfg, baseload)
        atomic_write_text(data.events(pid), events_csv(events))
        learn_dates = [d for d in complete_dates(stream)
                       if baseline.first_date <= d <= baseline.last_date]
        entry["baseline_transactions"] = _tx(vectors_for(events, cfg, pid, learn_dates))
        if not todo:
            results[pid] = PredictionResult(pid, [], [])
            continue
        prev = history[-1] if history else TrafficLightStatus.initial(pid)
        new = predict_days(baseline, vectors_for(events, cfg, pid, todo), prev, cfg)
        alerts = alerts_for(new, prev.status)
        entry["history"] += [s.to_dict() for s in new]
        scored = [h for h in entry["history"]]
        recent_dates = [dt.date.fromisoformat(h["date"]) for h in scored][-cfg["baseline.learning_days"]:]
        entry["recent_transactions"] = _tx(vectors_for(events, cfg, pid, recent_dates))
        alerts_doc += [a.to_dict() for a in alerts]
        results[pid] = PredictionResult(pid, new, alerts)
    doc["households"] = dict(sorted(doc["households"].items()))
    atomic_write_json(data.statuses, doc)
    atomic_write_json(data.alerts, alerts_doc)
    return results


def _tx(vectors: dict[dt.date, BehaviorVector]) -> list[list[str]]:
    return [sorted(t) for t in transactions_from_vectors(vectors.values())]


def latest_statuses(doc: dict) -> dict[str, TrafficLightStatus]:
    out = {}
    for pid, entry in doc["households"].items():
        hist = entry.get("history") or []
        out[pid] = (TrafficLightStatus.from_dict(hist[-1]) if hist
                    else TrafficLightStatus(pid, None, Status.GREEN, 0, ()))
    return out
