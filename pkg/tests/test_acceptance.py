"""Acceptance suite: one test per primary criterion, each printing PASS or FAIL."""

import datetime as dt
import math
import time

import numpy as np
import pytest

from fuelbmi import cnn
from fuelbmi import pipeline as P
from fuelbmi.anomaly import Status, mine_rules, zscore_day
from fuelbmi.behavior import (
    BehaviorVector,
    ObservationWindow,
    default_windows,
    device_hour_correlation,
    hour_of_day,
    learn_baseline,
    utc_date,
)
from fuelbmi.config import load_config
from fuelbmi.core import DetectionEvent, pair_annotations
from fuelbmi.indicators import HouseholdEconomics, lihc, ten_percent
from fuelbmi.preprocess import highpass_filter
from fuelbmi.service import StatusApp
from fuelbmi.simulator import HouseholdProfile, Scenario, ScenarioKind, synthesize

from conftest import run_world
from helpers import (
    INDICATOR_FIXTURE,
    INDICATOR_FUEL_MEDIAN,
    INDICATOR_LIHC,
    INDICATOR_TEN_PERCENT,
    brute_force_rules,
    gradient_errors,
    small_net,
)

RESULTS: list[str] = []


def verdict(number, name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {name}" + (f": {detail}" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_01_gradient_fidelity():
    t0 = time.perf_counter()
    worst = max(gradient_errors(*small_net(seed)) for seed in range(20))
    secs = time.perf_counter() - t0
    verdict(1, "gradient fidelity", worst < 1e-4 and secs < 30,
            f"worst relative error {worst:.2e} over 20 nets in {secs:.1f} s")


def test_02_disaggregation_competence(trained):
    acc = cnn.evaluate(trained.model, trained.split)["accuracy"]
    first, last = trained.history[0].val_loss, trained.history[-1].val_loss
    sizes = [len(trained.split.train), len(trained.split.validation), len(trained.split.test)]
    ok = acc >= 0.95 and last < first and trained.seconds < 300 and len(trained.split.classes) == 26
    verdict(2, "disaggregation competence", ok,
            f"test accuracy {acc:.4f}, val loss {first:.4f} -> {last:.4f}, "
            f"{trained.seconds:.1f} s, segments {sizes}")


def test_03_conservation():
    cfg = load_config()
    models = P.profile_from_config(cfg).appliances
    rng = np.random.default_rng(3)
    windows = [w.name for w in default_windows()]
    kinds = list(ScenarioKind)
    bad = 0
    for i in range(30):
        tend = {(m.appliance, w): float(rng.uniform(0, 2.5)) for m in models for w in windows
                if rng.random() < 0.3}
        floor = int(rng.integers(0, 300))
        prof = HouseholdProfile(f"C{i}", models, tend, noise_floor_w=floor, seed=i,
                                count_draw="poisson" if i % 2 else "stratified")
        kind = kinds[i % len(kinds)]
        mag = float(rng.uniform(0.1, 1.0)) if kind is ScenarioKind.CONSUMPTION_DIP else float(rng.integers(1, 4))
        scen = Scenario(kind, onset_day=1, magnitude=mag)
        res = synthesize(prof, 3, scen, seed=i)
        total = sum(res.components.values())
        bad += int(not np.array_equal(res.stream.watts - floor, total))
    verdict(3, "conservation", bad == 0, f"{30 - bad}/30 simulated households exact")


def test_04_night_usage_scenario(world):
    base = world.baselines["A1"]
    day1 = base.last_date + dt.timedelta(days=1)
    res = world.results["A1"]
    red_days = world.cfg["anomaly.red_days"]
    first = res.statuses[0]
    night = [r for r in first.reasons if (r.appliance, r.window) == ("Kettle", "Night")]
    events = [e for e in P.read_events(P.DataDir(world.root).events("A1"))
              if utc_date(e.start_ts) == day1 and hour_of_day(e.start_ts) < 5]
    statuses = [s.status for s in res.statuses]
    ok = (base.cells[("Kettle", "Night")] == (0.0, 0.0)
          and first.date == day1
          and len(events) == 3 and all(e.appliances == {"Kettle"} for e in events)
          and len(night) == 1 and night[0].observed == 3 and night[0].is_outlier
          and statuses[0] is Status.AMBER
          and all(s is Status.AMBER for s in statuses[:red_days - 1])
          and statuses[red_days - 1] is Status.RED
          and len(res.alerts) == 2)
    verdict(4, "night usage scenario", ok,
            f"day-1 night kettles {len(events)}, Kettle@Night count "
            f"{night[0].observed if night else None} z={night[0].z if night else None}, "
            f"statuses {''.join(s.value[0] for s in statuses)}, {len(res.alerts)} alerts")


def test_05_device_hour_correlation():
    windows = [ObservationWindow("Night", 0, 6), ObservationWindow("Early", 6, 7),
               ObservationWindow("Day", 7, 18), ObservationWindow("Tea", 18, 19),
               ObservationWindow("Late", 19, 24)]
    models = P.profile_from_config(load_config()).appliances
    prof = HouseholdProfile("M1", models, {("Microwave", "Early"): 1.0, ("Microwave", "Tea"): 1.0},
                            windows=windows)
    res = synthesize(prof, 30)
    events = [DetectionEvent("M1", frozenset([a.appliance]), a.on_ts, a.off_ts, 1.0)
              for a in pair_annotations(res.annotations)]
    rows, mat = device_hour_correlation(events, 30)
    m = mat[rows.index("Microwave")]
    others = np.delete(m, [6, 18])
    ok = m[6] == 1.0 and m[18] == 1.0 and np.all(others == 0) and len(events) == 60
    verdict(5, "device-hour correlation", ok,
            f"{len(events)} microwave events, cell 6 = {m[6]}, cell 18 = {m[18]}, others max {others.max()}")


def test_06_apriori_oracle():
    rng = np.random.default_rng(6)
    items = ["a", "b", "c", "d"]
    mismatches = 0
    total_rules = 0
    for _ in range(50):
        k = int(rng.integers(1, 5))
        n = int(rng.integers(0, 17))
        txs = [{x for x in items[:k] if rng.random() < 0.6} for _ in range(n)]
        sup = float(rng.choice([0.1, 0.2, 0.3, 0.5]))
        conf = float(rng.choice([0.1, 0.4, 0.6, 0.9]))
        got = {r.key: (r.support, r.confidence, r.lift) for r in mine_rules(txs, sup, conf)}
        want = brute_force_rules(txs, sup, conf)
        total_rules += len(want)
        same = got.keys() == want.keys() and all(
            abs(a - b) <= 1e-12 for key in got for a, b in zip(got[key], want[key]))
        mismatches += int(not same)
    verdict(6, "apriori oracle", mismatches == 0,
            f"50 instances, {total_rules} rules, {mismatches} mismatches")


def test_07_zscore_oracle():
    rng = np.random.default_rng(7)
    windows = [w.name for w in default_windows()]
    d0 = dt.date(2024, 1, 1)
    worst, bad_equal, checked = 0.0, 0, 0
    for case in range(100):
        days = int(rng.integers(3, 21))
        cells = [("Kettle", w) for w in windows[:int(rng.integers(1, 8))]]
        hist = {c: rng.integers(0, int(rng.integers(1, 5)), size=days) for c in cells}
        if case % 4 == 0:
            hist[cells[0]] = np.full(days, int(rng.integers(0, 3)))
        vecs = [BehaviorVector("Z", d0 + dt.timedelta(days=i), {c: int(hist[c][i]) for c in cells})
                for i in range(days)]
        base = learn_baseline(vecs, days)
        today = {c: int(rng.integers(0, 5)) for c in cells}
        if case % 3 == 0:
            xs = hist[cells[0]]
            if float(np.sum(xs)) / days == int(np.sum(xs)) // days:
                today[cells[0]] = int(np.sum(xs)) // days
        scores = zscore_day(BehaviorVector("Z", d0 + dt.timedelta(days=days), today), base)
        for s in scores:
            xs = [float(x) for x in hist[(s.appliance, s.window)]]
            mean = sum(xs) / len(xs)
            std = math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs))
            c = s.observed
            if c == mean:
                bad_equal += int(s.z != 0.0)
                expect = 0.0
            elif std == 0:
                expect = math.copysign(math.inf, c - mean)
            else:
                expect = (c - mean) / std
            if math.isinf(expect):
                worst = max(worst, 0.0 if s.z == expect else math.inf)
            else:
                worst = max(worst, abs(s.z - expect))
            checked += 1
    verdict(7, "z-score oracle", worst <= 1e-9 and bad_equal == 0,
            f"{checked} cells over 100 cases, max abs error {worst:.1e}, {bad_equal} nonzero at mean")


def test_08_indicator_oracles():
    pop = [HouseholdEconomics(*row) for row in INDICATOR_FIXTURE]
    vs = lihc(pop)
    tp = {v.pid for v in vs if v.ten_percent}
    lh = {v.pid for v in vs if v.lihc}
    boundary = ten_percent(pop[0])
    (single,) = lihc([HouseholdEconomics("S", 12000, 7000, 2500, 1)])
    ok = (tp == INDICATOR_TEN_PERCENT and lh == INDICATOR_LIHC
          and abs(vs[0].fuel_threshold - INDICATOR_FUEL_MEDIAN) < 1e-9
          and boundary.ratio == 0.1 and not boundary.fuel_poor and not single.lihc)
    verdict(8, "indicator oracles", ok,
            f"10% rule {sorted(tp)}, LIHC {sorted(lh)}, boundary poor={boundary.fuel_poor}, "
            f"single-household LIHC={single.lihc}")


def test_09_filter_contract():
    from fuelbmi.core import ValidatedStream

    rng = np.random.default_rng(9)
    cfg = load_config()
    violations = 0
    for i in range(200):
        n = int(rng.integers(0, 500))
        w = rng.integers(0, 4000, size=n)
        thr = int(rng.integers(0, 3000)) if i % 2 else 300
        s = ValidatedStream("F", 10 * np.arange(n), w)
        out = highpass_filter(s, thr)
        violations += int(not np.all((out.watts == 0) | (out.watts >= thr)))
        violations += int(highpass_filter(out, thr) != out)
    s = ValidatedStream("F", [0, 10, 20, 30], [299, 300, 301, 0])
    default_ok = (cfg["highpass_w"] == 300 and highpass_filter(s).watts.tolist() == [0, 300, 301, 0]
                  and P.prepare_stream(s, cfg, 0)[0].watts.tolist() == [0, 300, 301, 0])
    verdict(9, "filter contract", violations == 0 and default_ok,
            f"200 random streams, {violations} violations, 300 W default honoured: {default_ok}")


def test_10_determinism(world, trained, checkpoint_path, tmp_path):
    root = tmp_path / "again"
    run_world(root)
    a, b = P.DataDir(world.root), P.DataDir(root)
    files = [a.checkpoint.relative_to(a.root), a.statuses.relative_to(a.root)]
    files += [a.baseline(pid).relative_to(a.root) for pid in ("A1", "G1", "G2")]
    differ = [str(f) for f in files if (a.root / f).read_bytes() != (b.root / f).read_bytes()]
    X, _ = trained.split.arrays("test")
    probe = X[:100]
    loaded = cnn.load(checkpoint_path)
    same_probs = np.array_equal(cnn.forward(trained.model, probe).probs, cnn.forward(loaded, probe).probs)
    ok = not differ and same_probs and len(probe) == 100
    verdict(10, "determinism and persistence", ok,
            f"{len(files) - len(differ)}/{len(files)} files byte-identical, "
            f"100-segment probe bit-identical after reload: {same_probs}")


def test_11_endpoint_contract(world):
    app = StatusApp(world.cfg)
    codes = {}
    bodies = {}
    for pid in ("G1", "G2", "A1"):
        codes[pid], bodies[pid] = app.get(f"/v1/households/{pid}/status")
    rc, region = app.get("/v1/regions/R1/summary")
    missing, _ = app.get("/v1/households/NOPE/status")
    ok = (all(c == 200 for c in codes.values())
          and [bodies[p]["status"] for p in ("G1", "G2", "A1")] == ["green", "green", "red"]
          and all(bodies[p]["pid"] == p and bodies[p]["date"] == "2024-01-21" for p in bodies)
          and bodies["A1"]["consecutive_anomalous_days"] == 7 and bodies["A1"]["reasons"]
          and rc == 200 and region["histogram"] == {"green": 2, "amber": 0, "red": 1}
          and missing == 404)
    verdict(11, "endpoint contract", ok,
            f"statuses {[bodies[p]['status'] for p in ('G1', 'G2', 'A1')]}, "
            f"region {region.get('histogram')}, unknown pid -> {missing}")
