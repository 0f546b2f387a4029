"""Matplotlib figure rendering for the report paths.

Figures are rendered straight to files (Agg backend) next to the
plain-text data they visualize; nothing here opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

FIGSIZE = (7.0, 4.3)
DPI = 150


def render_metrics_figure(rounds, series: dict[str, list[float]], path) -> None:
    """Per-task validation metric versus round."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, values in series.items():
        ax.plot(rounds, values, marker="o", markersize=3, label=label)
    ax.set_xlabel("aggregation round")
    ax.set_ylabel("validation metric")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_drift_figure(rounds, lambdas, mean_drift, path) -> None:
    """Mean client encoder drift versus round, with the lambda schedule."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(rounds, mean_drift, color="tab:blue", marker="o", markersize=3,
            label="mean ||w* - g||")
    ax.set_xlabel("aggregation round")
    ax.set_ylabel("encoder drift", color="tab:blue")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(rounds, lambdas, color="tab:red", linestyle="--", label="lambda")
    ax2.set_ylabel("lambda", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_rate_figure(ts, rate_values, distances, path) -> None:
    """Per-task squared distance against the C*g(t) envelope, log scale."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for k in range(distances.shape[1]):
        ax.plot(ts, distances[:, k], alpha=0.8, label=f"task {k + 1}")
    c_fit = max(d / g for row, g in zip(distances, rate_values) for d in row if g > 0)
    ax.plot(ts, [c_fit * g for g in rate_values], "k--", label="C * g(t)")
    ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel("squared distance to optimum")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
