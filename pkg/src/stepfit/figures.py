"""Figure rendering for report outputs.

Each delimited report artifact gets a rendered companion image: the
error scatter map, the sweep trend chart, and the training-loss trace.
Rendering is headless and deterministic: the Agg backend, fixed figure
geometry, and pinned output metadata keep reruns byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import ContractError  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "stepfit"}}


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def scatter_figure(rows, path, title: str) -> None:
    """Colored scatter of per-sample endpoint error over start points.

    ``rows`` are (x0, x1, error) triples, as written to the scatter CSV.
    """
    rows = list(rows)
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    if rows:
        arr = np.asarray(rows, dtype=float)
        order = np.argsort(arr[:, 2])  # draw worst errors on top
        arr = arr[order]
        pts = ax.scatter(arr[:, 0], arr[:, 1], c=arr[:, 2], s=8.0, cmap="viridis")
        fig.colorbar(pts, ax=ax, label="endpoint error")
    ax.set_xlabel("start x0")
    ax.set_ylabel("start x1")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _finish(fig, path)


def sweep_figure(rows, path) -> None:
    """Metric-versus-steps trends, one line per strategy per metric.

    ``rows`` are dicts with keys nfe, strategy, mse, kl, wasserstein.
    """
    rows = list(rows)
    if not rows:
        raise ContractError("sweep figure needs at least one row")
    strategies = sorted({r["strategy"] for r in rows})
    fig, axes = plt.subplots(1, 3, figsize=(13.0, 4.0))
    for ax, key, label in zip(
        axes, ("mse", "kl", "wasserstein"), ("endpoint MSE", "KL divergence", "sliced W2")
    ):
        for strat in strategies:
            got = sorted((r["nfe"], r[key]) for r in rows if r["strategy"] == strat)
            ax.plot([g[0] for g in got], [g[1] for g in got], marker="o", label=strat)
        ax.set_xlabel("steps")
        ax.set_ylabel(label)
        ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    _finish(fig, path)


def trace_figure(rows, path, title: str) -> None:
    """Batch and smoothed loss over iterations.

    ``rows`` are (iteration, lr, batch_loss, smoothed_loss) tuples.
    """
    rows = list(rows)
    if not rows:
        raise ContractError("trace figure needs at least one row")
    arr = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(arr[:, 0], arr[:, 2], alpha=0.35, label="batch loss")
    ax.plot(arr[:, 0], arr[:, 3], label="smoothed loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    _finish(fig, path)
