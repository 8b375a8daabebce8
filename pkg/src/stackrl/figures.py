"""Matplotlib figure emission for report paths.

Every report command writes its delimited output first; these helpers render
a companion PNG next to it.  The Agg backend keeps everything headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import GridMap  # noqa: E402


def save_training_curves(rows: list[dict], path: str) -> None:
    """Per-epoch metric curves plus the epsilon schedule."""
    epochs = [r["epoch"] for r in rows]
    metric_keys = [k for k in rows[0] if k not in ("epoch", "epsilon")]
    fig, (ax_top, ax_bot) = plt.subplots(2, 1, sharex=True, figsize=(7, 5),
                                         height_ratios=[3, 1])
    for key in metric_keys:
        ax_top.plot(epochs, [r[key] for r in rows], label=key)
    ax_top.set_ylabel("metric")
    ax_top.legend(loc="best", fontsize=8)
    ax_top.grid(alpha=0.3)
    ax_bot.plot(epochs, [r["epsilon"] for r in rows], color="gray")
    ax_bot.set_ylabel("epsilon")
    ax_bot.set_xlabel("epoch")
    ax_bot.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_accuracy_bars(labels: list[str], accuracies: list[float],
                       path: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), accuracies, color="steelblue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.axhline(0.5, color="gray", linestyle=":", linewidth=1)
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(losses: list[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_grid_image(grid: GridMap, path: str) -> None:
    """Occupancy map as an image; grid row 0 is drawn at the bottom."""
    fig, ax = plt.subplots(figsize=(5, 5 * grid.height / max(1, grid.width)))
    ax.imshow(np.flipud(grid.cells), cmap="gray_r", interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
