"""Figure helpers. Everything renders off-screen to PNG files."""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STATUS_COLORS = {"green": "#2e7d32", "amber": "#f9a825", "red": "#c62828"}

RC = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": False,
    "savefig.bbox": "tight",
}


def save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no software/date stamp, so reruns give identical files
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def device_hour_heatmap(rows, matrix: np.ndarray, title: str, path: Path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 0.45 * len(rows) + 1.2))
        im = ax.imshow(matrix, aspect="auto", cmap="Blues", vmin=0, vmax=1)
        ax.set_yticks(range(len(rows)), rows)
        ax.set_xticks(range(0, 24, 2))
        ax.set_xlabel("hour of day (UTC)")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label="fraction of days")
        return save(fig, path)


def status_timeline(histories: dict[str, list[tuple]], path: Path) -> Path:
    """One row per household; ``histories[pid]`` is a list of (date, status)."""
    pids = sorted(histories)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 0.4 * max(1, len(pids)) + 1.2))
        for i, pid in enumerate(pids):
            for date, status in histories[pid]:
                ax.barh(i, 1, left=date.toordinal(), color=STATUS_COLORS[status], height=0.8)
        ax.set_yticks(range(len(pids)), pids)
        ticks = sorted({d.toordinal() for h in histories.values() for d, _ in h})
        if ticks:
            step = max(1, len(ticks) // 8)
            shown = ticks[::step]
            ax.set_xticks([t + 0.5 for t in shown],
                          [dt.date.fromordinal(t).isoformat() for t in shown], rotation=30, ha="right")
        ax.set_title("daily status")
        return save(fig, path)


def training_curves(history, path: Path) -> Path:
    epochs = [r.epoch for r in history]
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
        a1.plot(epochs, [r.train_loss for r in history], label="train")
        a1.plot(epochs, [r.val_loss for r in history], label="validation")
        a1.set_xlabel("epoch")
        a1.set_ylabel("mean cross-entropy")
        a1.set_yscale("log")
        a1.legend(frameon=False)
        a2.plot(epochs, [r.train_accuracy for r in history], label="train")
        a2.plot(epochs, [r.val_accuracy for r in history], label="validation")
        a2.set_xlabel("epoch")
        a2.set_ylabel("accuracy")
        a2.set_ylim(0, 1.02)
        return save(fig, path)


def event_hours(points: list[tuple], path: Path, title: str) -> Path:
    """Scatter of event start hour per day; ``points`` are (date, hour, appliance, outlier)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        apps = sorted({p[2] for p in points})
        cmap = plt.get_cmap("tab10")
        for k, a in enumerate(apps):
            xs = [p[0].toordinal() for p in points if p[2] == a]
            ys = [p[1] for p in points if p[2] == a]
            ax.scatter(xs, ys, s=12, color=cmap(k % 10), label=a)
        out = [p for p in points if p[3]]
        if out:
            ax.scatter([p[0].toordinal() for p in out], [p[1] for p in out], s=60,
                       facecolors="none", edgecolors="k", label="outlier cell")
        ax.set_ylim(0, 24)
        ax.set_yticks(range(0, 25, 6))
        ax.set_ylabel("start hour (UTC)")
        ax.set_xlabel("day")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7, loc="upper left", bbox_to_anchor=(1, 1))
        return save(fig, path)
