"""Figure rendering for training logs and score reports.

Every report path writes its figures next to the delimited output files.
Uses the Agg backend so runs stay headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_DPI = 150


def save_loss_curve(path, losses, title="Locator margin loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, lw=1.2)
    ax.set_xlabel("batch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_return_curve(path, returns, lengths, title="Rewriter training") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(returns) + 1), returns, lw=1.0, label="mean return")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean return", color="C0")
    ax2 = ax.twinx()
    ax2.plot(range(1, len(lengths) + 1), lengths, lw=1.0, color="C1",
             alpha=0.7, label="mean length")
    ax2.set_ylabel("mean episode length", color="C1")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_metric_bars(path, scores: dict[str, float], title="Scores") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(scores)
    vals = [scores[n] for n in names]
    ax.bar(names, vals, color=["C0", "C1", "C2"][: len(names)])
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_ablation_bars(path, rows: dict[str, dict[str, float]],
                       title="Ablation") -> None:
    """Grouped bars: one group per metric, one bar per pipeline variant."""
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    variants = list(rows)
    metrics = list(next(iter(rows.values())))
    width = 0.8 / len(variants)
    for vi, variant in enumerate(variants):
        xs = [mi + vi * width for mi in range(len(metrics))]
        ys = [rows[variant][m] for m in metrics]
        ax.bar(xs, ys, width=width, label=variant)
    ax.set_xticks([mi + width * (len(variants) - 1) / 2 for mi in range(len(metrics))])
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
