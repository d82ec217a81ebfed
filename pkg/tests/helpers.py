"""Independent oracles shared by the unit and acceptance tests."""

from itertools import combinations

import numpy as np

from fuelbmi.cnn import Architecture, Hyperparameters, backprop, build_model, objective
from fuelbmi.core import label_space


def small_net(seed: int, weight_decay: float = 0.01):
    arch = Architecture(input_len=20, kernels=4, kernel_len=5, pool=2, hidden=(8, 6))
    model = build_model(label_space(1)[:3], arch, Hyperparameters(seed=seed, weight_decay=weight_decay))
    rng = np.random.default_rng(1000 + seed)
    # move biases off zero so every parameter is exercised
    for k in model.params:
        model.params[k] += rng.normal(0, 0.1, model.params[k].shape)
    X = rng.normal(0, 1, (4, 20))
    Y = np.eye(3)[rng.integers(0, 3, 4)]
    return model, X, Y


def gradient_errors(model, X, Y, eps=1e-5, floor=1e-6):
    """Worst relative error of every analytic gradient against central differences."""
    grads, _ = backprop(model, X, Y)
    worst = 0.0
    for name, p in model.params.items():
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + eps
            up = objective(model, X, Y)
            p[i] = orig - eps
            down = objective(model, X, Y)
            p[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name][i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, rel)
    return worst


def brute_force_rules(transactions, min_support, min_confidence):
    """Every rule by enumerating all item subsets; no pruning, no reuse."""
    txs = [frozenset(t) for t in transactions]
    n = len(txs)
    items = sorted({i for t in txs for i in t})
    if n == 0:
        return {}

    def sup(s):
        return sum(1 for t in txs if s <= t) / n

    out = {}
    for size in range(2, len(items) + 1):
        for itemset in combinations(items, size):
            s_all = sup(frozenset(itemset))
            if s_all < min_support:
                continue
            for r in range(1, size):
                for ante in combinations(itemset, r):
                    cons = tuple(x for x in itemset if x not in ante)
                    conf = s_all / sup(frozenset(ante))
                    if conf >= min_confidence:
                        out[(ante, cons)] = (s_all, conf, conf / sup(frozenset(cons)))
    return out


# Household economics fixture: pid, income_bhc, income_ahc, fuel_cost, occupants.
# Expected verdicts were computed once with exact rational arithmetic and frozen.
INDICATOR_FIXTURE = [
    ("P01", 10000, 8000, 1000, 1),
    ("P02", 10000, 8000, 1001, 1),
    ("P03", 18000, 15000, 1813, 2),
    ("P04", 30000, 26000, 1200, 2),
    ("P05", 30000, 9000, 2400, 3),
    ("P06", 45000, 40000, 2100, 4),
    ("P07", 9000, 5000, 1200, 1),
    ("P08", 22000, 19000, 2400, 3),
    ("P09", 16000, 12500, 900, 2),
    ("P10", 25000, 21000, 1950, 5),
]
INDICATOR_FUEL_MEDIAN = 1000.5
INDICATOR_INCOME_MEDIAN = 25625 / 3
INDICATOR_TEN_PERCENT = {"P02", "P03", "P07", "P08"}
INDICATOR_LIHC = {"P05", "P07"}
