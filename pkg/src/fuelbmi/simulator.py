"""Seeded synthetic households: appliance waveforms, daily schedules and
10-second aggregate streams with ground-truth annotations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .behavior import ObservationWindow, default_windows, validate_windows
from .core import APPLIANCES, Annotation, DeviceType, ValidatedStream

DAY_S = 86400
DEFAULT_START_TS = 1704067200  # 2024-01-01T00:00:00Z


@dataclass(frozen=True)
class ApplianceModel:
    appliance: str
    device_type: DeviceType
    power_w: int
    duration_s: int = 0
    states: tuple[tuple[int, int], ...] = ()
    jitter: float = 0.0
    cadence_s: int = 10

    def __post_init__(self):
        if self.appliance not in APPLIANCES:
            raise ValueError(f"unknown appliance {self.appliance!r}")
        states = tuple((int(p), int(d)) for p, d in self.states)
        object.__setattr__(self, "states", states)
        if self.device_type is DeviceType.TYPE2:
            if len(states) < 2:
                raise ValueError("Type2 appliances need at least two states")
            if any(p <= 0 or d < self.cadence_s for p, d in states):
                raise ValueError("Type2 states need positive power and duration >= cadence")
            object.__setattr__(self, "duration_s", sum(d for _, d in states))
            if self.power_w <= 0:
                object.__setattr__(self, "power_w", max(p for p, _ in states))
        elif states:
            raise ValueError(f"{self.device_type.value} appliances take no state list")
        if self.power_w <= 0:
            raise ValueError("power_w must be positive")
        if self.duration_s < self.cadence_s:
            raise ValueError("duration_s must be at least one cadence step")
        if not 0.0 <= self.jitter <= 0.2:
            raise ValueError("jitter must lie in [0, 0.2]")

    @property
    def n_samples(self) -> int:
        return self.duration_s // self.cadence_s


def _seeded(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def appliance_waveform(model: ApplianceModel, seed=0) -> np.ndarray:
    """Power draw at cadence for one activation, as int64 watts."""
    rng = _seeded(seed)
    n = model.n_samples
    cad = model.cadence_s
    if model.device_type is DeviceType.TYPE2:
        base = np.concatenate([np.full(d // cad, p, dtype=float) for p, d in model.states])
    elif model.device_type is DeviceType.TYPE3:
        # bounded random walk in (0, power_w]
        steps = rng.normal(0.0, 0.1 * model.power_w, size=n)
        level = 0.5 * model.power_w
        base = np.empty(n)
        for i in range(n):
            level = min(max(level + steps[i], 1.0), float(model.power_w))
            base[i] = level
        return np.clip(np.rint(base), 1, model.power_w).astype(np.int64)
    else:
        base = np.full(n, model.power_w, dtype=float)
    if model.jitter > 0 and model.device_type is not DeviceType.TYPE4:
        base = base * (1.0 + model.jitter * rng.uniform(-1.0, 1.0, size=len(base)))
    return np.maximum(np.rint(base), 1).astype(np.int64)


class ScenarioKind(enum.Enum):
    NORMAL = "Normal"
    NIGHT_USAGE = "NightUsage"
    CONSUMPTION_DIP = "ConsumptionDip"
    SELF_DISCONNECT = "SelfDisconnect"
    APPLIANCE_SUBSTITUTION = "ApplianceSubstitution"


@dataclass(frozen=True)
class Scenario:
    """A behaviour change applied from ``onset_day`` onwards.

    ``magnitude`` is a fraction for ConsumptionDip and an activation count
    for NightUsage; other kinds ignore it.
    """

    kind: ScenarioKind = ScenarioKind.NORMAL
    onset_day: int = 0
    magnitude: float = 1.0
    night_appliance: str = "Kettle"
    night_hours: tuple[float, float] = (0.0, 5.0)

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.onset_day < 0:
            raise ValueError("onset_day must be >= 0")
        if self.kind is ScenarioKind.CONSUMPTION_DIP and not 0 < self.magnitude <= 1:
            raise ValueError("ConsumptionDip magnitude must be in (0, 1]")
        if self.kind is ScenarioKind.NIGHT_USAGE and self.magnitude < 1:
            raise ValueError("NightUsage magnitude is an activation count >= 1")

    @classmethod
    def normal(cls) -> "Scenario":
        return cls()

    def active(self, day_index: int) -> bool:
        return self.kind is not ScenarioKind.NORMAL and day_index >= self.onset_day


@dataclass
class HouseholdProfile:
    pid: str
    appliances: Sequence[ApplianceModel]
    usage_tendencies: Mapping[tuple[str, str], float]
    noise_floor_w: int = 80
    seed: int = 0
    windows: Sequence[ObservationWindow] = field(default_factory=default_windows)
    start_ts: int = DEFAULT_START_TS
    cadence_s: int = 10
    count_draw: str = "stratified"

    def __post_init__(self):
        if self.noise_floor_w < 0:
            raise ValueError("noise_floor_w must be >= 0")
        self.windows = validate_windows(self.windows)
        names = {w.name for w in self.windows}
        known = {m.appliance for m in self.appliances}
        for (a, w), t in self.usage_tendencies.items():
            if not np.isfinite(t) or t < 0:
                raise ValueError(f"tendency for {a}@{w} must be finite and >= 0")
            if w not in names:
                raise ValueError(f"tendency refers to unknown window {w!r}")
            if a not in known and t > 0:
                raise ValueError(f"tendency refers to appliance {a!r} with no model")
        if self.count_draw not in ("stratified", "poisson"):
            raise ValueError("count_draw must be 'stratified' or 'poisson'")
        if self.start_ts % DAY_S:
            raise ValueError("start_ts must be a UTC midnight")

    def model(self, appliance: str) -> ApplianceModel:
        for m in self.appliances:
            if m.appliance == appliance:
                return m
        raise KeyError(appliance)


Schedule = list[tuple[ApplianceModel, int]]


def _draw_count(rng: np.random.Generator, tendency: float, how: str) -> int:
    if tendency <= 0:
        return 0
    if how == "poisson":
        return int(rng.poisson(tendency))
    # floor plus a Bernoulli on the fractional part: mean = tendency, least variance
    whole = int(np.floor(tendency))
    return whole + int(rng.random() < tendency - whole)


def _merge_same_appliance(schedule: Schedule) -> Schedule:
    """Sort by start and drop activations that start while the same appliance runs."""
    out: Schedule = []
    busy_until: dict[str, int] = {}
    for model, start in sorted(schedule, key=lambda e: (e[1], e[0].appliance)):
        if start < busy_until.get(model.appliance, -1):
            continue
        busy_until[model.appliance] = start + model.duration_s
        out.append((model, start))
    return out


def _place(rng, lo_s: float, hi_s: float, duration_s: int, cadence: int) -> int:
    hi = max(lo_s, hi_s - duration_s)
    t = rng.uniform(lo_s, hi) if hi > lo_s else lo_s
    return int(t // cadence) * cadence


def schedule_day(profile: HouseholdProfile, day_index: int, seed: int = 0) -> Schedule:
    """Activations for one day: counts per (appliance, window) and uniform starts."""
    rng = np.random.default_rng([seed, profile.seed, day_index, 1])
    day0 = profile.start_ts + day_index * DAY_S
    out: Schedule = []
    for model in profile.appliances:
        for w in profile.windows:
            n = _draw_count(rng, profile.usage_tendencies.get((model.appliance, w.name), 0.0),
                            profile.count_draw)
            for _ in range(n):
                start = _place(rng, w.start_hour * 3600, w.end_hour * 3600, model.duration_s,
                               profile.cadence_s)
                out.append((model, day0 + start))
    return _merge_same_appliance(out)


def inject_scenario(schedule: Schedule, scenario: Scenario, day_index: int = 0,
                    profile: HouseholdProfile | None = None, seed: int = 0) -> Schedule:
    """Apply a scenario's transformation to one day's schedule."""
    if not scenario.active(day_index):
        return list(schedule)
    rng = np.random.default_rng([seed, day_index, 2])
    kind = scenario.kind
    if kind is ScenarioKind.SELF_DISCONNECT:
        return []
    if kind is ScenarioKind.CONSUMPTION_DIP:
        idx = [i for i, (m, _) in enumerate(schedule) if m.appliance in ("Oven", "WashingMachine")]
        k = int(round(scenario.magnitude * len(idx)))
        drop = set(rng.choice(idx, size=k, replace=False).tolist()) if k else set()
        return [e for i, e in enumerate(schedule) if i not in drop]
    if kind is ScenarioKind.APPLIANCE_SUBSTITUTION:
        micro = _require_model(profile, "Microwave")
        swapped = sorted(((micro, s) if m.appliance == "Oven" else (m, s) for m, s in schedule),
                         key=lambda e: (e[1], e[0].appliance))
        out, busy = [], -1
        for m, s in swapped:
            if m.appliance == micro.appliance:
                # a substitute colliding with a running microwave waits for it
                if s < busy:
                    s = -(-busy // micro.cadence_s) * micro.cadence_s
                busy = s + m.duration_s
            out.append((m, s))
        return sorted(out, key=lambda e: (e[1], e[0].appliance))
    if kind is ScenarioKind.NIGHT_USAGE:
        model = _require_model(profile, scenario.night_appliance)
        cadence = model.cadence_s
        day0 = (profile.start_ts if profile else 0) + day_index * DAY_S
        n = int(scenario.magnitude)
        lo, hi = (h * 3600 for h in scenario.night_hours)
        slot = (hi - lo) / n
        extra = []
        for k in range(n):
            # central part of each slot keeps the injected runs well apart
            a = lo + k * slot + 0.15 * slot
            b = lo + (k + 1) * slot - 0.15 * slot
            extra.append((model, day0 + _place(rng, a, b, model.duration_s, cadence)))
        return _merge_same_appliance(list(schedule) + extra)
    return list(schedule)


def _require_model(profile, appliance) -> ApplianceModel:
    if profile is None:
        raise ValueError("scenario needs the household profile")
    return profile.model(appliance)


@dataclass
class SimulationResult:
    stream: ValidatedStream
    annotations: list[Annotation]
    components: dict[str, np.ndarray]
    baseload: np.ndarray
    schedule: Schedule

    @property
    def aggregate(self) -> np.ndarray:
        return self.stream.watts


def synthesize(profile: HouseholdProfile, days: int, scenario: Scenario | None = None,
               seed: int = 0) -> SimulationResult:
    """Simulate ``days`` whole days of 10-second aggregate load.

    The aggregate is the integer sum of the baseload and every appliance
    component stream.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    scenario = scenario or Scenario.normal()
    cad = profile.cadence_s
    n = days * DAY_S // cad
    t0 = profile.start_ts
    ts = t0 + cad * np.arange(n, dtype=np.int64)
    components = {m.appliance: np.zeros(n, dtype=np.int64) for m in profile.appliances}
    baseload = np.full(n, profile.noise_floor_w, dtype=np.int64)
    annotations: list[Annotation] = []
    full: Schedule = []
    for day in range(days):
        sched = inject_scenario(schedule_day(profile, day, seed), scenario, day, profile, seed)
        for k, (model, start) in enumerate(sched):
            wave = appliance_waveform(model, np.random.default_rng([seed, profile.seed, day, k, 3]))
            i0 = (start - t0) // cad
            i1 = min(n, i0 + len(wave))
            comp = components.setdefault(model.appliance, np.zeros(n, dtype=np.int64))
            comp[i0:i1] += wave[: i1 - i0]
            annotations.append(Annotation(profile.pid, model.appliance, "on", int(start)))
            annotations.append(Annotation(profile.pid, model.appliance, "off",
                                          int(start + len(wave) * cad)))
        full.extend(sched)
    if scenario.kind is ScenarioKind.SELF_DISCONNECT:
        # activations stop at onset (including any running over midnight); the floor stays
        cut = max(0, min(n, scenario.onset_day * DAY_S // cad))
        for comp in components.values():
            comp[cut:] = 0
    aggregate = baseload.copy()
    for comp in components.values():
        aggregate += comp
    stream = ValidatedStream(profile.pid, ts, aggregate, (), cad)
    annotations.sort(key=lambda a: (a.ts, a.action != "off", a.appliance))
    return SimulationResult(stream, annotations, components, baseload, full)
