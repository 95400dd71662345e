"""Static SVG figures for cluster and persistence results.

All figures render through the Agg backend with a fixed hash salt and no
embedded creation date, so the same inputs always produce the same bytes.
Text stays as SVG text elements (not font paths) to keep files small and
diffable.
"""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "routinesig"
matplotlib.rcParams["svg.fonttype"] = "none"
matplotlib.rcParams["figure.dpi"] = 100

WEEKDAY_COLOR = "#4878a8"
WEEKEND_COLOR = "#e08214"


def _save(fig: plt.Figure, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".svg")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None}, bbox_inches="tight")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def centroid_heatmap(centroids: np.ndarray, feature_names: list[str], path: str) -> None:
    """Per-cluster mean standardized feature values."""
    k, n = centroids.shape
    fig, ax = plt.subplots(figsize=(0.55 * n + 2.2, 0.5 * k + 1.6))
    vmax = float(np.nanmax(np.abs(centroids))) if np.isfinite(centroids).any() else 1.0
    vmax = max(vmax, 1e-9)
    im = ax.imshow(centroids, cmap="RdBu_r", vmin=-vmax, vmax=vmax, aspect="auto")
    ax.set_xticks(range(n), feature_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(k), [f"C{j}" for j in range(k)], fontsize=8)
    ax.set_xlabel("feature")
    ax.set_ylabel("cluster")
    ax.set_title("Cluster centroids (z-scores)")
    fig.colorbar(im, ax=ax, shrink=0.8, label="mean z-score")
    _save(fig, path)


def cluster_day_counts(counts: np.ndarray, path: str) -> None:
    """Days assigned to each cluster."""
    k = counts.shape[0]
    fig, ax = plt.subplots(figsize=(0.6 * k + 2.0, 3.2))
    ax.bar(range(k), counts, color="#5a5aa0")
    ax.set_xticks(range(k), [f"C{j}" for j in range(k)], fontsize=8)
    ax.set_xlabel("cluster")
    ax.set_ylabel("days")
    ax.set_title("Days per cluster")
    _save(fig, path)


def weekday_weekend_bars(weekday_share: np.ndarray, weekend_share: np.ndarray,
                         path: str) -> None:
    """Stacked weekday/weekend proportion per cluster."""
    k = weekday_share.shape[0]
    wd = np.nan_to_num(weekday_share)
    we = np.nan_to_num(weekend_share)
    fig, ax = plt.subplots(figsize=(0.6 * k + 2.0, 3.2))
    ax.bar(range(k), wd, color=WEEKDAY_COLOR, label="weekday")
    ax.bar(range(k), we, bottom=wd, color=WEEKEND_COLOR, label="weekend")
    ax.axhline(5.0 / 7.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xticks(range(k), [f"C{j}" for j in range(k)], fontsize=8)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("cluster")
    ax.set_ylabel("proportion of cluster days")
    ax.set_title("Weekday vs weekend share per cluster")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def transition_heatmap(mean_matrix: np.ndarray, path: str) -> None:
    """Cohort-average day-to-day transition probabilities."""
    k = mean_matrix.shape[0]
    fig, ax = plt.subplots(figsize=(0.55 * k + 2.4, 0.55 * k + 2.0))
    im = ax.imshow(mean_matrix, cmap="viridis", vmin=0.0,
                   vmax=max(float(np.nanmax(mean_matrix)), 1e-9), aspect="equal")
    ax.set_xticks(range(k), [f"C{j}" for j in range(k)], fontsize=8)
    ax.set_yticks(range(k), [f"C{j}" for j in range(k)], fontsize=8)
    ax.set_xlabel("to cluster")
    ax.set_ylabel("from cluster")
    ax.set_title("Mean transition probabilities")
    fig.colorbar(im, ax=ax, shrink=0.8, label="probability")
    _save(fig, path)


def rank_proportion_curves(curves: dict[int, tuple[np.ndarray, np.ndarray]],
                           path: str) -> None:
    """Mean ranked proportion per rank, one series per K, with +/-1 SD bands."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    cmap = plt.get_cmap("plasma")
    ks = sorted(curves)
    for i, k in enumerate(ks):
        mean, sd = curves[k]
        ranks = np.arange(1, mean.shape[0] + 1)
        color = cmap(0.15 + 0.7 * (i / max(len(ks) - 1, 1)))
        ax.plot(ranks, mean, marker="o", markersize=3, color=color, label=f"K={k}")
        ax.fill_between(ranks, mean - sd, mean + sd, color=color, alpha=0.18, linewidth=0)
    ax.set_xlabel("rank")
    ax.set_ylabel("mean proportion")
    ax.set_ylim(bottom=0)
    ax.set_title("Ranked routine proportions (+/- 1 SD)")
    ax.legend(fontsize=8)
    _save(fig, path)
