"""Static plot artifacts: loss curves, metric bars, phantom preview panels."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_loss_curves(rows: list[dict], path: Path | str, title: str = "training losses") -> None:
    if not rows:
        return
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for key in ("l_gan", "l_cyc", "l_shape", "l_total"):
        ax.plot(steps, [r[key] for r in rows], label=key, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pretrain_curves(history, path: Path | str, title: str = "segmentor training") -> None:
    if not history:
        return
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [h.loss for h in history], color="tab:red", label="cross-entropy")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [h.dice_myo for h in history], color="tab:blue", label="myo dice")
    ax2.set_ylabel("myo dice", color="tab:blue")
    ax2.set_ylim(0, 1)
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_method_bars(table: dict[str, dict[str, float]], path: Path | str, title: str = "target Dice by method") -> None:
    """table: method -> structure -> mean dice."""
    methods = list(table)
    structures = sorted({s for row in table.values() for s in row})
    x = np.arange(len(structures))
    width = 0.8 / max(1, len(methods))
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, method in enumerate(methods):
        vals = [table[method].get(s, np.nan) for s in structures]
        ax.bar(x + i * width, vals, width, label=method)
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels(structures)
    ax.set_ylim(0, 1)
    ax.set_ylabel("dice")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sample_panel(samples, path: Path | str) -> None:
    """Grid of (image, mask) pairs for eyeballing generated data."""
    n = len(samples)
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
    for i, sample in enumerate(samples):
        axes[0][i].imshow(sample.image, cmap="gray", vmin=-1, vmax=1)
        axes[0][i].set_title(f"{sample.domain.value} p{sample.patient_id}s{sample.slice_index}", fontsize=8)
        axes[1][i].imshow(sample.mask, cmap="viridis", vmin=0, vmax=3)
        for ax in (axes[0][i], axes[1][i]):
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
