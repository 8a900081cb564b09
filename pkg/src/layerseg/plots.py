"""Matplotlib figure emission for training and evaluation reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_training_log(log_path: str | Path, out_path: str | Path) -> Path:
    """Render loss curves from a line-delimited training log."""
    steps, recon, entr, rep, lr = [], [], [], [], []
    with open(log_path) as fh:
        for line in fh:
            rec = json.loads(line)
            steps.append(rec["step"])
            recon.append(rec["recon"])
            entr.append(rec["entr"])
            rep.append(rec["rep"])
            lr.append(rec["lr"])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    ax1.plot(steps, recon, label="reconstruction", lw=0.8)
    ax1.plot(steps, entr, label="entropy", lw=0.8)
    ax1.plot(steps, rep, label="consistency", lw=0.8)
    ax1.set_yscale("log")
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(steps, lr, color="tab:red", lw=0.8)
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("step")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_eval_report(
    names: list[str],
    ious: list[float],
    f1s: list[float],
    pooled_iou: float,
    pooled_f1: float,
    out_path: str | Path,
) -> Path:
    """Render per-image metric distributions next to the pooled scores."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.hist(ious, bins=20, range=(0, 1), color="tab:blue", alpha=0.8)
    ax1.axvline(pooled_iou, color="k", ls="--", label=f"pooled {pooled_iou:.3f}")
    ax1.set_xlabel("fgIoU")
    ax1.set_ylabel("images")
    ax1.legend(fontsize=8)
    ax2.hist(f1s, bins=20, range=(0, 1), color="tab:green", alpha=0.8)
    ax2.axvline(pooled_f1, color="k", ls="--", label=f"pooled {pooled_f1:.3f}")
    ax2.set_xlabel("F1")
    ax2.legend(fontsize=8)
    fig.suptitle(f"{len(names)} images")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
