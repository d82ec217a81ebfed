"""Mini-batch training, classification and event detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core import ApplianceClass, DetectionEvent, ValidatedStream
from ..preprocess import DatasetSplit, Segment, StreamTooShort, segment_windows
from .layers import DimensionMismatch, cross_entropy
from .network import NetworkModel, backprop, forward
from .optim import update_parameters

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


def _loss_acc(model: NetworkModel, X: np.ndarray, Y: np.ndarray) -> tuple[float, float]:
    if len(X) == 0:
        return float("nan"), float("nan")
    probs = forward(model, X).probs
    loss = cross_entropy(Y, probs) / len(X)
    acc = float(np.mean(probs.argmax(axis=1) == Y.argmax(axis=1)))
    return loss, acc


def train(model: NetworkModel, split: DatasetSplit,
          epochs: int | None = None) -> tuple[NetworkModel, list[EpochRecord]]:
    """Train on ``split.train``; keep the parameters with the lowest validation loss.

    Losses in the history are mean cross-entropy per example. The input model
    is not modified.
    """
    if [c for c in split.classes] != list(model.classes):
        raise DimensionMismatch("dataset class table differs from the model's")
    epochs = model.hp.epochs if epochs is None else epochs
    model = model.copy()
    if epochs == 0:
        return model, []
    X, Y = split.arrays("train")
    if len(X) == 0:
        raise ValueError("empty training split")
    if X.shape[1] != model.arch.input_len:
        raise DimensionMismatch(f"segments have length {X.shape[1]}, model expects {model.arch.input_len}")
    Xv, Yv = split.arrays("validation")
    has_val = len(Xv) > 0
    hp = model.hp
    rng = np.random.default_rng([hp.seed, 17])
    history: list[EpochRecord] = []
    best, best_loss = model.copy(), np.inf
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        for lo in range(0, len(X), hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            grads, _ = backprop(model, X[idx], Y[idx])
            update_parameters(model, grads, batch_size=len(idx))
        tl, ta = _loss_acc(model, X, Y)
        vl, va = _loss_acc(model, Xv, Yv) if has_val else (tl, ta)
        history.append(EpochRecord(epoch + 1, tl, ta, vl, va))
        log.info("epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 epoch + 1, tl, ta, vl, va)
        if vl < best_loss:
            best_loss, best = vl, model.copy()
    return best, history


def classify_batch(model: NetworkModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Label indices (lowest index on ties) and their probabilities, inputs in watts."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    if X.shape[-1] != model.arch.input_len:
        raise DimensionMismatch(f"segment length {X.shape[-1]} != {model.arch.input_len}")
    probs = forward(model, X / model.scale_w).probs
    idx = probs.argmax(axis=1)
    return idx, probs[np.arange(len(idx)), idx]


def classify_segment(model: NetworkModel, segment: Segment | np.ndarray) -> tuple[ApplianceClass, float]:
    samples = segment.samples if isinstance(segment, Segment) else segment
    idx, conf = classify_batch(model, np.asarray(samples)[None])
    return model.classes[int(idx[0])], float(conf[0])


def evaluate(model: NetworkModel, split: DatasetSplit, part: str = "test") -> dict:
    """Accuracy and per-class precision/recall on one split."""
    X, Y = split.arrays(part)
    if len(X) == 0:
        return {"n": 0, "accuracy": float("nan"), "per_class": {}}
    pred = forward(model, X).probs.argmax(axis=1)
    true = Y.argmax(axis=1)
    per_class = {}
    for i, c in enumerate(model.classes):
        tp = int(np.sum((pred == i) & (true == i)))
        fp = int(np.sum((pred == i) & (true != i)))
        fn = int(np.sum((pred != i) & (true == i)))
        per_class[c.encode()] = {
            "support": int(np.sum(true == i)),
            "precision": tp / (tp + fp) if tp + fp else float("nan"),
            "recall": tp / (tp + fn) if tp + fn else float("nan"),
        }
    return {"n": int(len(X)), "accuracy": float(np.mean(pred == true)), "per_class": per_class}


def detect_events(model: NetworkModel, stream: ValidatedStream, confidence_floor: float = 0.0,
                  stride: int | None = None, complete_views: bool = True) -> list[DetectionEvent]:
    """Classify half-overlapping windows and merge them into per-appliance events.

    Composite labels decode to one event per member appliance. Adjacent or
    overlapping windows with the same appliance merge; each event is then
    trimmed to the span of non-zero samples it covers.

    With ``complete_views`` a window that cuts through a run of activity is
    ignored whenever some other window holds that whole run: a cut view of
    one appliance often looks like another (a toaster's tail is a microwave).
    """
    L = model.arch.input_len
    stride = stride or max(1, L // 2)
    try:
        segs = segment_windows(stream, L, stride)
    except StreamTooShort:
        return []
    if not segs:
        return []
    idx, conf = classify_batch(model, np.stack([s.samples for s in segs]))
    cad = stream.cadence_s
    keep = _complete_views(stream, segs, L) if complete_views else np.ones(len(segs), bool)
    spans: dict[str, list[list]] = {}
    for seg, i, c, k in zip(segs, idx, conf, keep):
        label = model.classes[int(i)]
        if not k or label.is_background or c < confidence_floor:
            continue
        t0, t1 = seg.start_ts, seg.start_ts + L * cad
        for a in label.members:
            runs = spans.setdefault(a, [])
            if runs and t0 <= runs[-1][1]:
                runs[-1][1] = max(runs[-1][1], t1)
                runs[-1][2] = max(runs[-1][2], float(c))
            else:
                runs.append([t0, t1, float(c)])
    events = []
    ts, w = stream.ts, stream.watts
    for a, runs in spans.items():
        for t0, t1, c in runs:
            lo, hi = np.searchsorted(ts, [t0, t1])
            active = np.flatnonzero(w[lo:hi] > 0)
            if len(active):
                t0, t1 = int(ts[lo + active[0]]), int(ts[lo + active[-1]]) + cad
            events.append(DetectionEvent(stream.pid, frozenset([a]), int(t0), int(t1), min(1.0, c)))
    events.sort(key=lambda e: (e.start_ts, e.appliance))
    return events


def _complete_views(stream: ValidatedStream, segs: list[Segment], L: int) -> np.ndarray:
    """Mask of windows that cut no run of activity another window holds whole."""
    active = np.concatenate([[False], stream.watts > 0, [False]])
    edges = np.flatnonzero(np.diff(active.astype(np.int8)))
    runs = edges.reshape(-1, 2)  # [start, end) sample indices
    starts = np.searchsorted(stream.ts, [s.start_ts for s in segs])
    held = np.zeros(len(runs), bool)
    for lo in starts:
        held |= (runs[:, 0] >= lo) & (runs[:, 1] <= lo + L)
    keep = np.ones(len(segs), bool)
    for j, lo in enumerate(starts):
        cut = (runs[:, 0] < lo + L) & (runs[:, 1] > lo) & ((runs[:, 0] < lo) | (runs[:, 1] > lo + L))
        keep[j] = not np.any(cut & held)
    return keep
