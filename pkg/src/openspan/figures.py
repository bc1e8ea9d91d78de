"""Report figures rendered to files next to the JSON/TSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")  # file output only, no display
import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .spans import RatioReport


def plot_threshold_sweep(report: EvalReport, path: str | Path) -> Path:
    """F1 against decision threshold, one curve per dataset plus the macro."""
    path = Path(path)
    ts = list(report.thresholds)
    fig, ax = plt.subplots(figsize=(6, 4))
    for ds in report.datasets():
        ax.plot(ts, [report.dataset_micro_f1(ds, t) for t in ts],
                marker="o", label=ds)
    if len(report.datasets()) > 1:
        ax.plot(ts, [report.macro_f1(t) for t in ts],
                marker="s", linestyle="--", color="black", label="macro")
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("micro F1")
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ratio_bars(report: RatioReport, path: str | Path) -> Path:
    """Positive-to-negative ratios, masked next to unmasked, per row."""
    path = Path(path)
    groups = sorted({(r.language, r.tokenizer) for r in report.rows})
    unmasked = [report.find(l, t, False).ratio or 0.0 for l, t in groups]
    masked = [report.find(l, t, True).ratio or 0.0 for l, t in groups]
    xs = range(len(groups))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(groups)), 4))
    ax.bar([x - width / 2 for x in xs], unmasked, width, label="unmasked")
    ax.bar([x + width / 2 for x in xs], masked, width, label="masked")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{l}\n{t}" for l, t in groups], fontsize=8)
    ax.set_ylabel("positives / negatives")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curves(metrics: Sequence[dict], path: str | Path) -> Path:
    """Per-step loss with validation F1 overlaid where evals happened."""
    path = Path(path)
    loss_steps = [m["step"] for m in metrics if "loss" in m]
    losses = [m["loss"] for m in metrics if "loss" in m]
    eval_steps = [m["step"] for m in metrics if "val_macro_f1" in m]
    evals = [m["val_macro_f1"] for m in metrics if "val_macro_f1" in m]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(loss_steps, losses, color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if evals:
        ax2 = ax.twinx()
        ax2.plot(eval_steps, evals, color="tab:orange", marker="o",
                 label="val macro F1")
        ax2.set_ylabel("val macro F1")
        ax2.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
