"""Report figures written straight to image files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402


def overhead_plot(ticks: np.ndarray, world, goals, path, title: str = "") -> Path:
    """Top view of trunks, goals, and true versus estimated flight paths."""
    fig, ax = plt.subplots(figsize=(7, 7))
    xy = ticks[:, 1:3]
    est = ticks[:, 8:10]
    lo = np.minimum(xy.min(axis=0), est.min(axis=0)) - 8
    hi = np.maximum(xy.max(axis=0), est.max(axis=0)) + 8
    near = np.all((world.centers >= lo) & (world.centers <= hi), axis=1)
    trunks = [Circle(c, r) for c, r in zip(world.centers[near], world.radii[near])]
    ax.add_collection(PatchCollection(trunks, facecolor="saddlebrown", edgecolor="none", alpha=0.8))
    g = np.asarray(goals).reshape(-1, 3)
    ax.plot(g[:, 0], g[:, 1], "k--", lw=0.8, label="pattern")
    ax.plot(xy[:, 0], xy[:, 1], "-", color="tab:blue", lw=1.2, label="true")
    ax.plot(est[:, 0], est[:, 1], "-", color="tab:orange", lw=0.8, alpha=0.8, label="estimate")
    hit = ticks[:, -1] > 0
    if hit.any():
        ax.plot(xy[hit, 0], xy[hit, 1], "rx", ms=8, label="collision")
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def velocity_histogram(speeds, path, v_max: float | None = None) -> Path:
    """Distribution of flight speed, with mean and quartiles marked."""
    s = np.asarray(speeds, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(s, bins=40, color="tab:blue", alpha=0.75)
    for q, style in zip(np.percentile(s, [25, 50, 75]), (":", "-", ":")):
        ax.axvline(q, color="k", ls=style, lw=1)
    ax.axvline(s.mean(), color="tab:red", lw=1.5, label=f"mean {s.mean():.2f} m/s")
    if v_max is not None:
        ax.axvline(v_max, color="gray", ls="--", lw=1, label=f"v_max {v_max:g} m/s")
    ax.set_xlabel("speed [m/s]")
    ax.set_ylabel("ticks")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def comparison_bars(rows, path) -> Path:
    """Accuracy and completeness per mode side by side."""
    names = [r["mode"] for r in rows]
    acc = [r["accuracy_rmse_m"] for r in rows]
    comp = [r["completeness_pct"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.bar(names, acc, color="tab:orange")
    a1.set_ylabel("accuracy RMSE [m]")
    a2.bar(names, comp, color="tab:green")
    a2.set_ylabel("completeness [%]")
    a2.set_ylim(0, 100)
    for ax in (a1, a2):
        ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
