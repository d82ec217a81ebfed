"""Filtering, signature extraction, composite generation, windowing and
dataset framing for the disaggregation network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Activation,
    Annotation,
    ApplianceClass,
    BMIError,
    ValidatedStream,
    pair_annotations,
)

SOURCES = ("extracted", "composited", "segmented")


class EmptyStream(BMIError):
    pass


class StreamTooShort(BMIError):
    pass


@dataclass(frozen=True)
class LabeledSignature:
    label: ApplianceClass
    samples: np.ndarray
    source: str = "extracted"
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or len(samples) == 0:
            raise ValueError("signature needs a non-empty 1-D sample vector")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class Segment:
    pid: str
    start_ts: int
    samples: np.ndarray
    label: ApplianceClass | None = None


@dataclass
class DatasetSplit:
    """Framed examples (in watts) for training, validation and test."""

    train: list[Segment]
    validation: list[Segment]
    test: list[Segment]
    seed: int
    ratios: tuple[float, float, float]
    classes: list[ApplianceClass] = field(default_factory=list)
    scale_w: float = 3000.0

    def arrays(self, part: str) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` for one split: X is (N, L) divided by ``scale_w``, Y one-hot (N, C)."""
        segs = getattr(self, part)
        index = {c: i for i, c in enumerate(self.classes)}
        L = len(segs[0].samples) if segs else 0
        X = np.array([s.samples for s in segs], dtype=float).reshape(len(segs), L) / self.scale_w
        Y = np.zeros((len(segs), len(self.classes)))
        for n, s in enumerate(segs):
            Y[n, index[s.label]] = 1.0
        return X, Y


def highpass_filter(stream: ValidatedStream, threshold_w: int = 300) -> ValidatedStream:
    """Zero every sample strictly below ``threshold_w``; keep the time base."""
    if threshold_w < 0:
        raise ValueError("threshold_w must be >= 0")
    w = stream.watts
    return stream.with_watts(np.where(w < threshold_w, 0, w))


def remove_baseload(stream: ValidatedStream, floor_w: int) -> ValidatedStream:
    """Subtract a constant always-on draw, clamping at zero."""
    return stream.with_watts(np.maximum(stream.watts - int(floor_w), 0))


def calibrate_threshold(stream: ValidatedStream, quantile: float) -> int:
    """Per-household threshold: the ``quantile`` of the stream's watts, rounded up.

    Uses the nearest-rank definition (the ceil(q*n)-th smallest value).
    """
    if len(stream) == 0:
        raise EmptyStream("cannot calibrate on an empty stream")
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    values = np.sort(stream.watts)
    rank = max(1, math.ceil(quantile * len(values) - 1e-9))
    return int(math.ceil(values[rank - 1]))


def idle_noise_floor(stream: ValidatedStream, activations: Sequence[Activation]) -> float:
    """Median draw over samples outside every annotated activation."""
    busy = np.zeros(len(stream), dtype=bool)
    for act in activations:
        lo, hi = np.searchsorted(stream.ts, [act.on_ts, act.off_ts], side="left")
        busy[lo:hi + 1] = True
    idle = stream.watts[~busy]
    return float(np.median(idle)) if len(idle) else 0.0


def extract_signatures(stream: ValidatedStream, annotations: Iterable[Annotation] | Sequence[Activation],
                       pad_s: int = 0, noise_floor_w: float | None = None,
                       isolated_only: bool = False) -> list[LabeledSignature]:
    """Cut each annotated activation out of the stream.

    The slice covers ``[on - pad_s, off + pad_s]`` inclusive. The household
    noise floor (median of idle samples unless given) is subtracted and the
    result clamped at zero. With ``isolated_only`` activations whose slice
    overlaps another activation are skipped.
    """
    rows = list(annotations)
    acts = rows if rows and isinstance(rows[0], Activation) else pair_annotations(rows)
    floor = idle_noise_floor(stream, acts) if noise_floor_w is None else float(noise_floor_w)
    out = []
    for i, act in enumerate(acts):
        lo_ts, hi_ts = act.on_ts - pad_s, act.off_ts + pad_s
        if isolated_only and any(
            o.on_ts <= hi_ts and o.off_ts >= lo_ts for j, o in enumerate(acts) if j != i
        ):
            continue
        lo, hi = np.searchsorted(stream.ts, [lo_ts, hi_ts], side="left")
        if hi < len(stream) and stream.ts[hi] == hi_ts:
            hi += 1
        if hi <= lo:
            continue
        samples = np.maximum(stream.watts[lo:hi].astype(float) - floor, 0.0)
        out.append(LabeledSignature(ApplianceClass.of(act.appliance), samples, "extracted",
                                    (act.ident,)))
    return out


def _overlay(parts: Sequence[np.ndarray], offsets: Sequence[int]) -> np.ndarray:
    length = max(o + len(p) for p, o in zip(parts, offsets))
    total = np.zeros(length)
    for p, o in zip(parts, offsets):
        total[o:o + len(p)] += p
    return total


def alignment_offsets(first_len: int, m: int) -> dict[str, list[int]]:
    """Start offsets of each member for the three composite alignments."""
    return {
        "full": [0] * m,
        "half": [0] + [first_len // 2] * (m - 1),
        "staggered": [k * first_len // (m + 1) for k in range(m)],
    }


def composite_signatures(singletons: Sequence[LabeledSignature], max_combo: int = 3,
                         draws: int = 1, seed: int = 0) -> list[LabeledSignature]:
    """Sum singleton signatures of every class subset of size 2..max_combo.

    Each draw picks one exemplar per member (randomly when several exist) and
    emits one composite per alignment (full, half, staggered overlap).
    """
    if max_combo < 2:
        raise ValueError("max_combo must be >= 2")
    by_class: dict[str, list[LabeledSignature]] = {}
    for s in singletons:
        if len(s.label.members) != 1:
            continue
        by_class.setdefault(s.label.members[0], []).append(s)
    names = sorted(by_class)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(2, min(max_combo, len(names)) + 1):
        for subset in combinations(names, k):
            label = ApplianceClass(subset)
            for _ in range(draws):
                picks = [by_class[a][rng.integers(len(by_class[a]))] for a in subset]
                picks = [picks[i] for i in rng.permutation(k)]
                first = len(picks[0].samples)
                for offsets in alignment_offsets(first, k).values():
                    total = _overlay([p.samples for p in picks], offsets)
                    acts = tuple(sorted(a for p in picks for a in p.activations))
                    out.append(LabeledSignature(label, total, "composited", acts))
    return out


def segment_windows(stream: ValidatedStream, L: int = 60, stride: int = 30) -> list[Segment]:
    """Sliding windows of ``L`` samples; windows touching a gap are dropped."""
    if L < 1 or stride < 1:
        raise ValueError("L and stride must be >= 1")
    n = len(stream)
    if n < L:
        raise StreamTooShort(f"stream has {n} samples, window needs {L}")
    ts, w = stream.ts, stream.watts
    out = []
    gaps = stream.gaps
    for start in range(0, n - L + 1, stride):
        t0, t1 = ts[start], ts[start + L - 1]
        if any(a < t1 and b > t0 for a, b in gaps):
            continue
        out.append(Segment(stream.pid, int(t0), w[start:start + L].astype(float)))
    return out


def frame(samples: np.ndarray, L: int, rng: np.random.Generator, min_visible: float = 1.0) -> np.ndarray:
    """Place a signature in an ``L``-sample frame at a random offset.

    Signatures longer than ``L`` are cropped at a random start. With
    ``min_visible < 1`` the signature may hang off either edge as long as
    that fraction of it stays inside.
    """
    n = len(samples)
    out = np.zeros(L)
    if n >= L:
        lo = int(rng.integers(0, n - L + 1))
        return samples[lo:lo + L].astype(float)
    keep = max(1, int(math.ceil(min_visible * n)))
    off = int(rng.integers(keep - n, L - keep + 1))
    src_lo, dst_lo = max(0, -off), max(0, off)
    m = min(n - src_lo, L - dst_lo)
    out[dst_lo:dst_lo + m] = samples[src_lo:src_lo + m]
    return out


def frame_edge(samples: np.ndarray, L: int, rng: np.random.Generator,
               min_visible: float = 0.05) -> np.ndarray:
    """Frame a signature so that it hangs off the left or right edge of the frame."""
    n = len(samples)
    keep = int(rng.integers(max(1, math.ceil(min_visible * n)), n + 1))
    keep = min(keep, L)
    out = np.zeros(L)
    if rng.random() < 0.5:
        out[:keep] = samples[n - keep:]
    else:
        out[L - keep:] = samples[:keep]
    return out


def _split_ids(ids: Sequence[str], ratios, rng) -> dict[str, int]:
    ids = list(ids)
    order = rng.permutation(len(ids))
    n = len(ids)
    cut1 = int(round(ratios[0] * n))
    cut2 = cut1 + int(round(ratios[1] * n))
    part = {}
    for rank, i in enumerate(order):
        part[ids[i]] = 0 if rank < cut1 else (1 if rank < cut2 else 2)
    return part


def build_dataset(signatures: Sequence[LabeledSignature], L: int = 60, scale_w: float = 3000.0,
                  ratios: tuple[float, float, float] = (0.7, 0.15, 0.15), seed: int = 0,
                  max_combo: int = 0, composite_draws: int = 1,
                  classes: Sequence[ApplianceClass] | None = None,
                  min_visible: float = 1.0, edge_copies: int = 0,
                  edge_visible: float = 0.05) -> DatasetSplit:
    """Frame, normalise and split signatures by activation identity.

    Every activation id is assigned to one split (stratified per appliance),
    and a signature joins a split only if all of its activations did, so no
    test example shares an activation with a training example. With
    ``max_combo >= 2`` composites are generated inside each split from that
    split's singletons, ``composite_draws`` scaled by the split ratio.

    ``edge_copies`` adds that many extra framings of every training singleton
    cut by a frame edge (at least ``edge_visible`` of it inside), as sliding
    windows see activations at inference. Validation and test are unaffected.
    """
    if not signatures:
        raise ValueError("no signatures")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    # stratify the activation split by the signature's label
    by_label: dict[ApplianceClass, list[str]] = {}
    for i, s in enumerate(signatures):
        ids = s.activations or (f"sig{i}",)
        if len(ids) == 1:
            by_label.setdefault(s.label, [])
            if ids[0] not in by_label[s.label]:
                by_label[s.label].append(ids[0])
    part: dict[str, int] = {}
    for label in sorted(by_label):
        part.update(_split_ids(by_label[label], ratios, rng))
    buckets: list[list[LabeledSignature]] = [[], [], []]
    for i, s in enumerate(signatures):
        ids = s.activations or (f"sig{i}",)
        where = {part.get(a) for a in ids}
        if len(where) == 1 and None not in where:
            buckets[where.pop()].append(s)
    if max_combo >= 2:
        for k in range(3):
            singles = [s for s in buckets[k] if len(s.label.members) == 1]
            if len({s.label for s in singles}) >= 2:
                draws = max(1, int(round(composite_draws * ratios[k] / max(ratios))))
                buckets[k] += composite_signatures(singles, max_combo, draws, seed + 101 * (k + 1))
    if classes is None:
        classes = sorted({s.label for b in buckets for s in b},
                         key=lambda c: (c.is_background, len(c.members), c.members))
    frame_rng = np.random.default_rng([seed, 7])
    splits = []
    for b in buckets:
        segs = [
            Segment("", 0, frame(s.samples, L, frame_rng, min_visible), s.label)
            for s in b
        ]
        splits.append(segs)
    for s in buckets[0]:
        if len(s.label.members) == 1 and not s.label.is_background:
            for _ in range(edge_copies):
                splits[0].append(Segment("", 0, frame_edge(s.samples, L, frame_rng, edge_visible), s.label))
    return DatasetSplit(splits[0], splits[1], splits[2], seed, tuple(ratios), list(classes), scale_w)


def background_signatures(stream: ValidatedStream, activations: Sequence[Activation], L: int,
                          count: int, seed: int = 0, threshold_w: int = 300,
                          noise_floor_w: float = 0.0) -> list[LabeledSignature]:
    """Idle stretches of ``L`` samples, preprocessed like inference input."""
    busy = np.zeros(len(stream), dtype=bool)
    for act in activations:
        lo, hi = np.searchsorted(stream.ts, [act.on_ts, act.off_ts], side="left")
        busy[lo:hi + 1] = True
    free = np.flatnonzero(~busy)
    if len(free) < L:
        return [LabeledSignature(ApplianceClass.background(), np.zeros(L), "segmented",
                                 (f"{stream.pid}:bg:{i}",)) for i in range(count)]
    # starts whose full window is idle
    csum = np.concatenate([[0], np.cumsum(busy)])
    starts = np.flatnonzero(csum[L:] - csum[:-L] == 0)
    rng = np.random.default_rng([seed, 11])
    picks = np.sort(rng.choice(starts, size=min(count, len(starts)), replace=False))
    out = []
    for p in picks:
        w = np.maximum(stream.watts[p:p + L].astype(float) - noise_floor_w, 0.0)
        w[w < threshold_w] = 0.0
        out.append(LabeledSignature(ApplianceClass.background(), w, "segmented",
                                    (f"{stream.pid}:bg:{int(stream.ts[p])}",)))
    return out
