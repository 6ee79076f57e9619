"""Figure rendering for CLI reports.

Every report path that writes delimited output also renders a matplotlib
figure next to it: training curves beside metrics.csv, budget bars beside
profile.csv, a confusion heatmap beside confusion.csv.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def save_training_curves(history: list[dict], path) -> Path:
    path = Path(path)
    epochs = [r["epoch"] for r in history]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(epochs, [r["loss"] for r in history], color="tab:red")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("training loss")
    axes[1].plot(epochs, [r["acc"] for r in history], color="tab:blue")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("training accuracy")
    axes[1].set_ylim(0.0, 1.05)
    axes[2].plot(epochs, [r["lr"] for r in history], color="tab:green")
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("learning rate")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_profile_chart(grouped_entries, total_params: int, total_macs: int,
                       budgets, path) -> Path:
    """Per-module bars for parameters and MACs, with budget reference lines."""
    path = Path(path)
    names = [e.name for e in grouped_entries]
    params = [e.params / 1e6 for e in grouped_entries]
    macs = [e.macs / 1e9 for e in grouped_entries]
    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    axes[0].bar(names, params, color="tab:blue")
    axes[0].set_ylabel("parameters (M)")
    axes[0].set_title(f"total {total_params / 1e6:.2f}M")
    axes[1].bar(names, macs, color="tab:orange")
    axes[1].set_ylabel("multiply-accumulates (G)")
    axes[1].set_title(f"total {total_macs / 1e9:.2f}G")
    if budgets is not None:
        pb, fb = budgets
        axes[0].axhline(pb / 1e6, color="k", linestyle="--", label="budget")
        axes[1].axhline(fb / 1e9, color="k", linestyle="--", label="budget")
        axes[0].legend()
        axes[1].legend()
    for ax in axes:
        ax.tick_params(axis="x", rotation=60)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_confusion(confusion: np.ndarray, class_names, path) -> Path:
    path = Path(path)
    k = confusion.shape[0]
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * k, 1.0 + 0.8 * k))
    im = ax.imshow(confusion, cmap="Blues")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center",
                    color="black", fontsize=9)
    ax.set_xticks(range(k), class_names, rotation=45)
    ax.set_yticks(range(k), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
