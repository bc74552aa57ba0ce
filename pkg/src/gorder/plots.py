"""Figure rendering for scenario and probe reports.

All figures are written to files next to the delimited output; nothing is
shown interactively.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_value_curves", "plot_empirical_differences", "plot_profile",
           "plot_dependence"]


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_value_curves(curves: dict, x0: float, path: str,
                      title: str = "") -> str:
    """Overlay u(0, .) of both problems, one panel per payoff.

    `curves` maps payoff label -> (nodes_1, u0_1, nodes_2, u0_2).
    """
    n = len(curves)
    cols = min(n, 3)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 3.2 * rows),
                             squeeze=False)
    for ax, (label, (x1, u1, x2, u2)) in zip(axes.ravel(), curves.items()):
        ax.plot(x1, u1, label="problem 1", lw=1.4)
        ax.plot(x2, u2, label="problem 2", lw=1.4, ls="--")
        ax.axvline(x0, color="grey", lw=0.6, alpha=0.6)
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("x")
        ax.set_ylabel("u(0, x)")
        ax.legend(fontsize=8)
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_empirical_differences(rows, path: str, title: str = "") -> str:
    """Bar chart of value_2 - value_1 per payoff with the pass tolerance."""
    labels = [r.payoff if len(r.payoff) <= 24 else r.payoff[:21] + "..."
              for r in rows]
    diffs = [r.difference for r in rows]
    tols = [-r.tolerance for r in rows]
    fig, ax = plt.subplots(figsize=(1.2 * len(rows) + 3, 3.4))
    colors = ["tab:green" if r.passed else "tab:red" for r in rows]
    ax.bar(range(len(rows)), diffs, color=colors)
    ax.plot(range(len(rows)), tols, "k--", lw=0.8, label="-tolerance")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("value_2 - value_1")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_profile(sol, field: str, path: str, title: str = "") -> str:
    """Heat map of u_x or u_xx over the (t, x) grid."""
    data = getattr(sol, field)
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    mesh = ax.pcolormesh(sol.times, sol.nodes, data.T, shading="auto",
                         cmap="RdBu_r")
    fig.colorbar(mesh, ax=ax, label=field)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title(title or field)
    fig.tight_layout()
    return _save(fig, path)


def plot_dependence(table, path: str, title: str = "") -> str:
    """Log-log decay of the squared differences against perturbation size."""
    sizes = [r["size"] for r in table.rows]
    msd = [max(r["squared_diff"], 1e-300) for r in table.rows]
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.loglog(sizes, msd, "o-", lw=1.2)
    ax.set_xlabel("perturbation size")
    ax.set_ylabel("squared difference")
    if table.trend_slope is not None:
        ax.set_title(title or f"fitted slope {table.trend_slope:.2f}")
    elif title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
