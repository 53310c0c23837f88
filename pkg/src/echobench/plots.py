"""Figures for training runs and retrieval results.

Rendering uses the Agg backend so commands work headless. PNG metadata is
stripped so identical inputs produce identical files.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import EmptyInputError
from .metrics import MetricsReport
from .trainer import TrainHistory

_PNG_META = {"metadata": {"Software": None}}


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, **_PNG_META)
    plt.close(fig)


def plot_training_curves(history: TrainHistory, path: str | Path) -> None:
    """Loss and learning rate against step, two stacked panels."""
    if not history.steps:
        raise EmptyInputError("history has no step records")
    steps = [r.step for r in history.steps]
    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 5), sharex=True, height_ratios=[3, 1]
    )
    ax_loss.plot(steps, [r.loss for r in history.steps], lw=0.8, color="#1f6f8b")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(alpha=0.3)
    if history.evals:
        ax_eval = ax_loss.twinx()
        ax_eval.plot(
            [e.step for e in history.evals],
            [e.mcmrr_v2r for e in history.evals],
            "o-",
            ms=3,
            lw=0.8,
            color="#c1440e",
            label="valid MCMRR v2r",
        )
        ax_eval.set_ylabel("valid MCMRR", color="#c1440e")
        ax_eval.legend(loc="upper right", fontsize=8)
    ax_lr.plot(steps, [r.lr for r in history.steps], lw=0.8, color="#444444")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_rank_histogram(
    ranks_v2r: Sequence[int],
    ranks_r2v: Sequence[int],
    path: str | Path,
    title: str = "",
) -> None:
    """Histogram of correct-counterpart ranks for both directions."""
    if not ranks_v2r or not ranks_r2v:
        raise EmptyInputError("need ranks for both directions")
    top = max(max(ranks_v2r), max(ranks_r2v))
    bins = list(range(1, min(top, 30) + 2))
    if top > 30:
        bins.append(top + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(
        [list(ranks_v2r), list(ranks_r2v)],
        bins=bins,
        label=["video to report", "report to video"],
        color=["#1f6f8b", "#c1440e"],
    )
    ax.set_xlabel("rank of correct counterpart")
    ax.set_ylabel("queries")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_ablation_bars(reports: Sequence[MetricsReport], path: str | Path) -> None:
    """Grouped MCMRR bars per mode, one group per direction."""
    if not reports:
        raise EmptyInputError("no reports to plot")
    labels = [r.mode.key for r in reports]
    x = range(len(reports))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    bars_v = ax.bar(
        [i - width / 2 for i in x],
        [r.mcmrr_v2r for r in reports],
        width,
        label="video to report",
        color="#1f6f8b",
    )
    bars_r = ax.bar(
        [i + width / 2 for i in x],
        [r.mcmrr_r2v for r in reports],
        width,
        label="report to video",
        color="#c1440e",
    )
    for bars in (bars_v, bars_r):
        ax.bar_label(bars, fmt="%.2f", fontsize=7)
    ax.set_xticks(list(x), labels, rotation=15, fontsize=8)
    ax.set_ylabel("MCMRR (lower is better)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
