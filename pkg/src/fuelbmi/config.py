"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Every key is validated
against the schema below and unknown keys are rejected. Families of keys
(``windows.<name>``, ``sim.appliance.<name>``, ``sim.tendency.<appliance>@<window>``,
``regions.<pid>``) are matched by pattern. A file that sets any key of a
family replaces the whole family from the defaults.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from .behavior import ObservationWindow, validate_windows
from .core import APPLIANCES, BMIError, DeviceType


class ConfigError(BMIError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _weights(text: str) -> dict[int, float]:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        k, v = part.split(":")
        out[int(k)] = float(v)
    if not out or any(w <= 0 for w in out.values()):
        raise ValueError("weights must be positive")
    return out


def _window(text: str) -> tuple[float, float]:
    a, b = text.split("-")
    return float(a), float(b)


def _date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


@dataclass(frozen=True)
class ApplianceSpec:
    device_type: DeviceType
    power_w: int
    duration_s: int
    states: tuple[tuple[int, int], ...]
    jitter: float


def _appliance(text: str) -> ApplianceSpec:
    """``Type1 <watts> <seconds> [jitter]`` or ``Type2 <w>x<s>,<w>x<s>... [jitter]``."""
    parts = text.split()
    kind = DeviceType.parse(parts[0])
    if kind is DeviceType.TYPE2:
        states = tuple(tuple(int(v) for v in st.split("x")) for st in parts[1].split(","))
        jitter = float(parts[2]) if len(parts) > 2 else 0.0
        return ApplianceSpec(kind, 0, 0, states, jitter)
    jitter = float(parts[3]) if len(parts) > 3 else 0.0
    return ApplianceSpec(kind, int(parts[1]), int(parts[2]), (), jitter)


SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "seed": (int, "0"),
    "cadence_s": (int, "10"),
    "gap_tolerance_s": (int, "30"),
    "highpass_w": (int, "300"),
    "baseload_quantile": (float, "0.5"),
    "segment_len": (int, "60"),
    "stride": (int, "30"),
    "scale_w": (float, "3000"),
    "dataset.max_combo": (int, "3"),
    "dataset.per_class": (int, "115"),
    "dataset.ratios": (_floats, "0.7,0.15,0.15"),
    "dataset.pad_s": (int, "0"),
    "dataset.edge_copies": (int, "2"),
    "dataset.training_days": (int, "40"),
    "dataset.training_tendency": (float, "0.7"),
    "cnn.kernels": (int, "16"),
    "cnn.kernel_len": (int, "5"),
    "cnn.pool": (int, "2"),
    "cnn.hidden": (_ints, "64,32"),
    "cnn.learning_rate": (float, "0.001"),
    "cnn.rate_annealing": (float, "1e-6"),
    "cnn.rate_decay": (float, "1.0"),
    "cnn.momentum_start": (float, "0.5"),
    "cnn.momentum_ramp": (int, "10000"),
    "cnn.momentum_stable": (float, "0.9"),
    "cnn.weight_decay": (float, "1e-4"),
    "cnn.adam_beta2": (float, "0.999"),
    "cnn.adam_epsilon": (float, "1e-8"),
    "cnn.epochs": (int, "30"),
    "cnn.batch_size": (int, "32"),
    "cnn.confidence_floor": (float, "0.8"),
    "baseline.learning_days": (int, "14"),
    "anomaly.z_threshold": (float, "3.0"),
    "anomaly.red_days": (int, "7"),
    "anomaly.amber_min_outliers": (int, "1"),
    "rules.min_support": (float, "0.2"),
    "rules.min_confidence": (float, "0.6"),
    "rules.drift_threshold": (float, "0.2"),
    "indicators.weights": (_weights, "1:1.0,2:1.5"),
    "indicators.extra_per_person": (float, "0.3"),
    "indicators.income_fraction": (float, "0.6"),
    "paths.data_dir": (str, "data"),
    "paths.population": (str, ""),
    "paths.report_dir": (str, ""),
    "serve.host": (str, "127.0.0.1"),
    "serve.port": (int, "8080"),
    "sim.pid": (str, "H1"),
    "sim.days": (int, "21"),
    "sim.noise_floor_w": (int, "80"),
    "sim.count_draw": (str, "stratified"),
    "sim.start_date": (_date, "2024-01-01"),
    "sim.scenario": (str, "Normal"),
    "sim.onset_day": (int, "0"),
    "sim.magnitude": (float, "1.0"),
    "regions.default": (str, "R1"),
}

FAMILIES: dict[str, tuple[re.Pattern, Callable[[str], Any]]] = {
    "windows": (re.compile(r"^windows\.([A-Za-z][\w-]*)$"), _window),
    "sim.appliance": (re.compile(r"^sim\.appliance\.(\w+)$"), _appliance),
    "sim.tendency": (re.compile(r"^sim\.tendency\.(\w+)@([\w-]+)$"), float),
    "regions": (re.compile(r"^regions\.(?!default$)([\w.-]+)$"), str),
}


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        out[key] = value
    return out


def _family_of(key: str) -> str | None:
    for name, (pat, _) in FAMILIES.items():
        if pat.match(key):
            return name
    return None


def default_text() -> str:
    return resources.files("fuelbmi").joinpath("default.conf").read_text(encoding="utf-8")


class RunConfig:
    """Validated configuration; values are typed on access via ``cfg[key]``."""

    def __init__(self, raw: Mapping[str, str]):
        self.raw = dict(raw)
        self.values: dict[str, Any] = {}
        for key, value in self.raw.items():
            self.values[key] = self._convert(key, value)
        for key, (conv, default) in SCHEMA.items():
            if key not in self.values:
                self.values[key] = conv(default)
        self._check()

    @staticmethod
    def _convert(key: str, value: str):
        if key in SCHEMA:
            conv = SCHEMA[key][0]
        else:
            fam = _family_of(key)
            if fam is None:
                raise ConfigError(f"unknown configuration key {key!r}")
            conv = FAMILIES[fam][1]
        try:
            return conv(value)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def _check(self):
        v = self.values
        positive = ["cadence_s", "segment_len", "stride", "scale_w", "cnn.kernels", "cnn.kernel_len",
                    "cnn.pool", "cnn.batch_size", "baseline.learning_days", "anomaly.red_days",
                    "anomaly.amber_min_outliers", "sim.days", "dataset.per_class"]
        for k in positive:
            if v[k] <= 0:
                raise ConfigError(f"{k} must be positive")
        if v["highpass_w"] < 0 or v["sim.noise_floor_w"] < 0:
            raise ConfigError("highpass_w and sim.noise_floor_w must be >= 0")
        if len(v["dataset.ratios"]) != 3 or abs(sum(v["dataset.ratios"]) - 1) > 1e-9:
            raise ConfigError("dataset.ratios needs three values summing to 1")
        if len(v["cnn.hidden"]) != 2:
            raise ConfigError("cnn.hidden needs two widths")
        if v["sim.count_draw"] not in ("stratified", "poisson"):
            raise ConfigError("sim.count_draw must be stratified or poisson")
        if not 0 < v["baseload_quantile"] < 1:
            raise ConfigError("baseload_quantile must lie in (0, 1)")
        for k in ("rules.min_support", "rules.min_confidence"):
            if not 0 < v[k] <= 1:
                raise ConfigError(f"{k} must lie in (0, 1]")
        for a in self.appliances():
            if a not in APPLIANCES:
                raise ConfigError(f"unknown appliance {a!r}; known: {', '.join(APPLIANCES)}")
        try:
            windows = self.windows()
        except BMIError as exc:
            raise ConfigError(f"windows: {exc}") from None
        names = {w.name for w in windows}
        for (a, w), _ in self.tendencies().items():
            if w not in names:
                raise ConfigError(f"sim.tendency.{a}@{w}: unknown window")
            if a not in APPLIANCES:
                raise ConfigError(f"sim.tendency.{a}@{w}: unknown appliance")

    def __getitem__(self, key: str):
        return self.values[key]

    def family(self, name: str) -> dict[str, Any]:
        pat = FAMILIES[name][0]
        return {k: val for k, val in self.values.items() if pat.match(k)}

    def windows(self) -> tuple[ObservationWindow, ...]:
        fam = self.family("windows")
        ws = [ObservationWindow(k.split(".", 1)[1], a, b) for k, (a, b) in fam.items()]
        return validate_windows(ws)

    def appliances(self) -> dict[str, ApplianceSpec]:
        return {k.split(".", 2)[2]: spec for k, spec in self.family("sim.appliance").items()}

    def tendencies(self) -> dict[tuple[str, str], float]:
        out = {}
        for k, val in self.family("sim.tendency").items():
            a, w = k.split(".", 2)[2].split("@")
            out[(a, w)] = val
        return out

    def region_of(self, pid: str) -> str:
        return self.values.get(f"regions.{pid}", self.values["regions.default"])

    @property
    def data_dir(self) -> Path:
        return Path(self.values["paths.data_dir"])

    @property
    def report_dir(self) -> Path:
        return Path(self.values["paths.report_dir"] or self.data_dir / "report")

    def with_overrides(self, overrides: Mapping[str, str]) -> "RunConfig":
        return RunConfig(merge(self.raw, overrides))

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.raw.items()))


def merge(base: Mapping[str, str], top: Mapping[str, str]) -> dict[str, str]:
    """Overlay ``top`` on ``base``; a family touched by ``top`` is replaced wholesale."""
    touched = {f for f in map(_family_of, top) if f is not None}
    out = {k: v for k, v in base.items() if _family_of(k) not in touched}
    out.update(top)
    return out


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    raw = parse_text(default_text(), "default.conf")
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        raw = merge(raw, parse_text(text, str(p)))
    if overrides:
        # command-line overrides only replace the keys they name
        raw.update(overrides)
    return RunConfig(raw)
