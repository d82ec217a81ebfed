"""Expenditure-based fuel-poverty indicators: the 10% rule and Low Income
High Cost (LIHC), plus agreement against traffic-light status."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .core import BMIError


class ZeroIncome(BMIError):
    pass


class EmptyPopulation(BMIError):
    pass


class PidMismatch(BMIError):
    pass


@dataclass(frozen=True)
class HouseholdEconomics:
    pid: str
    income_bhc: float
    income_ahc: float
    fuel_cost: float
    occupants: int = 1

    def __post_init__(self):
        if self.income_bhc < 0 or self.income_ahc < 0:
            raise ValueError(f"{self.pid}: incomes must be >= 0")
        if self.fuel_cost < 0:
            raise ValueError(f"{self.pid}: fuel_cost must be >= 0")
        if self.occupants < 1:
            raise ValueError(f"{self.pid}: occupants must be >= 1")


@dataclass(frozen=True)
class TenPercentVerdict:
    pid: str
    ratio: float
    fuel_poor: bool


@dataclass(frozen=True)
class IndicatorVerdict:
    pid: str
    ten_percent: bool
    ratio: float
    lihc: bool
    fuel_threshold: float
    income_threshold: float
    equivalised_fuel: float
    equivalised_income: float


def ten_percent(econ: HouseholdEconomics, threshold: float = 0.10) -> TenPercentVerdict:
    """Fuel poor when fuel cost is strictly more than 10% of BHC income."""
    if econ.income_bhc <= 0:
        raise ZeroIncome(f"{econ.pid}: BHC income must be positive")
    ratio = econ.fuel_cost / econ.income_bhc
    return TenPercentVerdict(econ.pid, ratio, ratio > threshold)


def default_weights(extra_per_person: float = 0.3) -> Callable[[int], float]:
    """1 person: 1.0, 2 people: 1.5, each further person +0.3."""
    def weight(occupants: int) -> float:
        if occupants <= 1:
            return 1.0
        return 1.5 + extra_per_person * (occupants - 2)
    return weight


def weights_from_table(table: Mapping[int, float], extra_per_person: float = 0.3) -> Callable[[int], float]:
    """Lookup table with linear extension beyond its largest household size."""
    if not table or any(w <= 0 for w in table.values()):
        raise ValueError("equivalisation weights must be positive")
    top = max(table)

    def weight(occupants: int) -> float:
        if occupants in table:
            return table[occupants]
        if occupants > top:
            return table[top] + extra_per_person * (occupants - top)
        raise ValueError(f"no equivalisation weight for {occupants} occupants")
    return weight


def median(values: Sequence[float]) -> float:
    """Middle value; mean of the two central values for even sizes."""
    if not values:
        raise EmptyPopulation("median of nothing")
    xs = sorted(values)
    n = len(xs)
    mid = n // 2
    return xs[mid] if n % 2 else (xs[mid - 1] + xs[mid]) / 2.0


def lihc(population: Sequence[HouseholdEconomics],
         scale: Callable[[int], float] | Mapping[int, float] | None = None,
         income_fraction: float = 0.6) -> list[IndicatorVerdict]:
    """LIHC verdicts for every household of the population.

    Fuel threshold: median equivalised fuel cost. Income threshold of a
    household: ``income_fraction`` of the median equivalised AHC income plus
    that household's own equivalised fuel cost. Fuel poor when the fuel cost
    is above the fuel threshold and the income below the income threshold.
    """
    if not population:
        raise EmptyPopulation("LIHC needs at least one household")
    if scale is None:
        weight = default_weights()
    elif isinstance(scale, Mapping):
        weight = weights_from_table(scale)
    else:
        weight = scale
    eq_fuel = [h.fuel_cost / weight(h.occupants) for h in population]
    eq_income = [h.income_ahc / weight(h.occupants) for h in population]
    fuel_threshold = median(eq_fuel)
    income_median = median(eq_income)
    out = []
    for h, f, inc in zip(population, eq_fuel, eq_income):
        income_threshold = income_fraction * income_median + f
        tp = ten_percent(h) if h.income_bhc > 0 else TenPercentVerdict(h.pid, float("inf"), True)
        out.append(IndicatorVerdict(
            pid=h.pid, ten_percent=tp.fuel_poor, ratio=tp.ratio,
            lihc=f > fuel_threshold and inc < income_threshold,
            fuel_threshold=fuel_threshold, income_threshold=income_threshold,
            equivalised_fuel=f, equivalised_income=inc,
        ))
    return out


@dataclass(frozen=True)
class Confusion:
    both: int
    indicator_only: int
    bmi_only: int
    neither: int

    @property
    def total(self) -> int:
        return self.both + self.indicator_only + self.bmi_only + self.neither

    @property
    def agreement(self) -> float:
        return (self.both + self.neither) / self.total if self.total else float("nan")

    def to_dict(self) -> dict:
        return {"both": self.both, "indicator_only": self.indicator_only,
                "bmi_only": self.bmi_only, "neither": self.neither,
                "agreement": self.agreement}


def compare(verdicts: Iterable[IndicatorVerdict], bmi_statuses: Mapping[str, str]) -> dict[str, Confusion]:
    """Confusion counts of each indicator against ``BMI status == red``."""
    verdicts = list(verdicts)
    pids = {v.pid for v in verdicts}
    if pids != set(bmi_statuses):
        missing = sorted(pids ^ set(bmi_statuses))
        raise PidMismatch(f"households not present on both sides: {missing}")
    out = {}
    for name in ("ten_percent", "lihc"):
        cells = [0, 0, 0, 0]
        for v in verdicts:
            ind = getattr(v, name)
            red = str(getattr(bmi_statuses[v.pid], "value", bmi_statuses[v.pid])).lower() == "red"
            if ind and red:
                cells[0] += 1
            elif ind:
                cells[1] += 1
            elif red:
                cells[2] += 1
            else:
                cells[3] += 1
        out[name] = Confusion(*cells)
    return out


POPULATION_FIELDS = ("pid", "income_bhc", "income_ahc", "fuel_cost", "occupants")


def read_population(source) -> list[HouseholdEconomics]:
    """Parse ``pid,income_bhc,income_ahc,fuel_cost,occupants`` rows (header optional)."""
    text = source if isinstance(source, str) else source.read()
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for lineno, row in enumerate(rows, start=1):
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[0].strip().lower() == "pid":
            continue
        if len(row) != 5:
            raise ValueError(f"population line {lineno}: expected 5 fields")
        pid, bhc, ahc, fuel, occ = (c.strip() for c in row)
        out.append(HouseholdEconomics(pid, float(bhc), float(ahc), float(fuel), int(occ)))
    return out


def write_verdicts(verdicts: Iterable[IndicatorVerdict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pid", "ratio", "ten_percent", "equivalised_fuel", "fuel_threshold",
                "equivalised_income", "income_threshold", "lihc"])
    for v in verdicts:
        w.writerow([v.pid, f"{v.ratio:.6f}", int(v.ten_percent), f"{v.equivalised_fuel:.4f}",
                    f"{v.fuel_threshold:.4f}", f"{v.equivalised_income:.4f}",
                    f"{v.income_threshold:.4f}", int(v.lihc)])
    return buf.getvalue()
