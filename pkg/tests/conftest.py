import sys
import time

import pytest

from fuelbmi import cnn
from fuelbmi import pipeline as P
from fuelbmi.config import load_config


class Trained:
    def __init__(self, cfg, split, model, history, seconds):
        self.cfg = cfg
        self.split = split
        self.model = model
        self.history = history
        self.seconds = seconds


@pytest.fixture(scope="session")
def trained():
    """The default synthetic 26-class dataset and a network trained on it."""
    cfg = load_config()
    t0 = time.perf_counter()
    split = P.default_dataset(cfg)
    model = cnn.build_model(split.classes, P.architecture(cfg), P.hyperparameters(cfg), cfg["scale_w"])
    model, history = cnn.train(model, split)
    return Trained(cfg, split, model, history, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def checkpoint_path(trained, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "model.ckpt"
    cnn.save(trained.model, path)
    return path


# households of the shared pipeline run: pid -> (scenario, seed)
WORLD = {"G1": ("Normal", 1), "G2": ("Normal", 2), "A1": ("NightUsage", 3)}


def run_world(root, households=WORLD, magnitude=3, onset=14):
    """Full file-based pipeline: train the classifier, simulate, baseline, predict."""
    cfg = load_config(overrides={"paths.data_dir": str(root), "regions.A1": "R1",
                                 "regions.G1": "R1", "regions.G2": "R1"})
    P.mode_simulate(cfg, training=True)
    report = P.mode_device_training(cfg)
    data = P.DataDir(root)
    data.readings("TRAIN").unlink()
    for pid, (scenario, seed) in households.items():
        c = cfg.with_overrides({"sim.scenario": scenario, "sim.onset_day": str(onset),
                                "sim.magnitude": str(magnitude), "seed": str(seed)})
        P.mode_simulate(c, pid=pid)
    baselines = P.mode_behavioural_training(cfg)
    results = P.mode_prediction(cfg)
    return cfg, report, baselines, results


class World:
    def __init__(self, root, cfg, report, baselines, results):
        self.root = root
        self.cfg = cfg
        self.report = report
        self.baselines = baselines
        self.results = results


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    return World(root, *run_world(root))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: s[6:9]):
            terminalreporter.write_line(line)
