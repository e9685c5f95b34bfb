"""Report figures rendered next to the CSV/JSON outputs.

Figures are written with the Agg backend and without timestamp or software
metadata, so identical inputs produce identical PNG bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}
_COLORS = {"M": "tab:blue", "F": "tab:red"}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_training_curves(history: Sequence[dict], path: str | Path, title: str = "training") -> None:
    """Loss terms and dev scores against step."""
    steps = [row["step"] for row in history]
    fig, (ax_loss, ax_dev) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("mt", "kd", "gc", "total"):
        pts = [(s, row[key]) for s, row in zip(steps, history) if row.get(key) is not None]
        if pts:
            ax_loss.plot(*zip(*pts), marker=".", label=key)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="best")
    for key, label in (("dev_explicit_acc", "explicit acc (x100)"), ("dev_chrf", "chrF")):
        scale = 100.0 if key == "dev_explicit_acc" else 1.0
        pts = [(s, row[key] * scale) for s, row in zip(steps, history) if row.get(key) is not None]
        if pts:
            ax_dev.plot(*zip(*pts), marker=".", label=label)
    ax_dev.set_xlabel("step")
    ax_dev.legend(loc="best")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_projection(rows: Sequence[dict], path: str | Path, title: str = "occupation embeddings") -> None:
    """Scatter of projected occupation vectors.

    Colour shows the context pronoun, marker shape the stereotype label.
    """
    fig, ax = plt.subplots(figsize=(5, 4.5))
    markers = {"M": "o", "F": "^"}
    for ctx in ("M", "F"):
        for stereo in ("M", "F"):
            pts = [(float(r["x"]), float(r["y"])) for r in rows if r["context"] == ctx and r["stereotype"] == stereo]
            if pts:
                ax.scatter(*zip(*pts), c=_COLORS[ctx], marker=markers[stereo], s=22,
                           label=f"context {ctx} / stereotype {stereo}")
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.legend(loc="best", fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(xs: Sequence[float], ys: Sequence[float], labels: Sequence[str], path: str | Path,
               xlabel: str = "chrF", ylabel: str = "WinoMT accuracy", title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(xs, ys, c="tab:purple")
    for x, y, label in zip(xs, ys, labels):
        ax.annotate(str(label), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_metric_bars(reports: dict[str, dict], keys: Sequence[str], path: str | Path, title: str = "") -> None:
    """Grouped bars of selected metrics for several named models."""
    names = list(reports)
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(1.6 * len(keys) + 2, 3.5))
    for i, name in enumerate(names):
        vals = [reports[name].get(k) or 0.0 for k in keys]
        ax.bar([j + i * width for j in range(len(keys))], vals, width, label=name)
    ax.set_xticks([j + width * (len(names) - 1) / 2 for j in range(len(keys))])
    ax.set_xticklabels(keys, fontsize=8)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(loc="best", fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
