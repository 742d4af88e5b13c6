"""Matplotlib renderings of the report exports (ROC, score histogram, weight surface)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np


def save_roc_figure(points: np.ndarray, title: str, path: str | Path) -> None:
    """ROC curve from (fpr, tpr, threshold) rows."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(points[:, 0], points[:, 1], "-", lw=1.5)
    ax.plot([0, 1], [0, 1], "--", color="0.6", lw=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_histogram_figure(bins: np.ndarray, title: str, path: str | Path) -> None:
    """Overlaid normal/anomaly score histograms from (left, right, n_norm, n_anom) rows."""
    centers = (bins[:, 0] + bins[:, 1]) / 2.0
    width = (bins[:, 1] - bins[:, 0]) * 0.9
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, bins[:, 2], width=width, alpha=0.6, label="normal")
    ax.bar(centers, bins[:, 3], width=width, alpha=0.6, label="anomaly")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("clips")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_surface_figure(
    surface: np.ndarray,
    best_weights: np.ndarray,
    member_labels: list[str],
    path: str | Path,
) -> None:
    """Barycentric mAUC surface over the weight simplex, optimum marked in red."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])

    def to_xy(w: np.ndarray) -> np.ndarray:
        return w @ v

    xy = to_xy(surface[:, :3])
    tri = mtri.Triangulation(xy[:, 0], xy[:, 1])
    fig, ax = plt.subplots(figsize=(6, 5.5))
    m = ax.tripcolor(tri, surface[:, 3], shading="gouraud", cmap="viridis")
    fig.colorbar(m, ax=ax, label="mAUC")
    bx, by = to_xy(np.asarray(best_weights, dtype=np.float64))
    ax.plot([bx], [by], "o", color="red", ms=8, label="best weights")
    for corner, label in zip(v, member_labels):
        ax.annotate(label, corner, textcoords="offset points", xytext=(0, -12 if corner[1] == 0 else 8),
                    ha="center", fontsize=8)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_curve(epochs: list[int], losses: list[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, "-")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
