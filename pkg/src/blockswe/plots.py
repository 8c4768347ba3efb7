"""Matplotlib figures for run reports and balance experiments.

Everything renders straight to files through the Agg backend; nothing here
opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_timing_breakdown(report, path: str):
    """Stacked per-rank bars of the routine wall times."""
    from .runner import ROUTINES

    ranks = [rt.rank for rt in report.ranks]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(ranks) + 2), 3.2))
    bottom = np.zeros(len(ranks))
    for routine in ROUTINES:
        vals = np.array(report.routine_seconds(routine))
        ax.bar(ranks, vals, bottom=bottom, label=routine, width=0.75)
        bottom += vals
    ax.set_xlabel("rank")
    ax.set_ylabel("time (s)")
    ax.set_title(f"runtime breakdown, {report.steps} steps")
    ax.legend(fontsize=7, ncol=2)
    ax.set_xticks(ranks)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_field(mosaic: np.ndarray, header: str, path: str, title: str = ""):
    """Heatmap of a level raster (mosaic oriented x across, y up)."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    im = ax.imshow(mosaic.T, origin="lower", aspect="auto",
                   interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("x cell")
    ax.set_ylabel("y cell")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_cost_fit(samples, model, path: str):
    """Scatter of measured block costs with the fitted line."""
    x = np.array([s[0] for s in samples], dtype=float)
    y = np.array([s[1] for s in samples], dtype=float)
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.plot(x, y, "o", ms=4, alpha=0.7, label="measured")
    xs = np.linspace(0.0, x.max() * 1.05, 100)
    ax.plot(xs, model.slope * xs + model.intercept, "-",
            label=(f"fit: {model.slope:.3g} us/cell + {model.intercept:.3g} us"
                   f" (R$^2$={model.r_squared:.3f})"))
    ax.set_xlabel("cells per block")
    ax.set_ylabel("runtime (us)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_rank_costs(plans: dict, model, path: str):
    """Grouped per-rank predicted-cost bars for plan comparison."""
    from .balance import rank_costs

    labels = list(plans)
    costs = [rank_costs(plans[lb], model) for lb in labels]
    n_ranks = len(costs[0])
    xs = np.arange(n_ranks)
    width = 0.8 / len(labels)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * n_ranks + 2), 3.2))
    for k, (lb, c) in enumerate(zip(labels, costs)):
        ax.bar(xs + (k - (len(labels) - 1) / 2) * width, c, width=width,
               label=f"{lb} (max {c.max():.1f} us)")
    ax.set_xlabel("rank")
    ax.set_ylabel("predicted cost (us)")
    ax.set_xticks(xs)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
