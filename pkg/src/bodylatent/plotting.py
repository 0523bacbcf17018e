"""Report figures written straight to files (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
}
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def error_cdf(errors: dict, path, xlabel: str = "mean vertex distance") -> Path:
    """Cumulative distribution of per-item errors, one curve per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, vals in errors.items():
            v = np.sort(np.asarray(vals, dtype=float))
            ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post", label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("fraction of meshes")
        ax.set_ylim(0, 1.02)
        ax.legend()
        return _save(fig, path)


def loss_curves(histories: dict, path, smooth: int = 25) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, h in histories.items():
            h = np.asarray(h, dtype=float)
            if len(h) == 0:
                continue
            k = max(1, min(smooth, len(h)))
            ax.semilogy(np.convolve(h, np.ones(k) / k, mode="valid"), label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss (running mean)")
        ax.legend()
        return _save(fig, path)


def pose_paths(paths: dict, path, coords=(0, 1), markers: bool = True) -> Path:
    """Two pose coordinates of several trajectories plotted against each other."""
    i, j = coords
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, p in paths.items():
            p = np.asarray(p, dtype=float)
            ax.plot(p[:, i], p[:, j], "-o" if markers else "-", ms=2.5, lw=1.0, label=name)
        ax.set_xlabel(f"pose[{i}] (rad)")
        ax.set_ylabel(f"pose[{j}] (rad)")
        ax.legend()
        return _save(fig, path)


def bar_metrics(values: dict, path, ylabel: str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(values)
        ax.bar(names, [values[n] for n in names], color="0.45")
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def mesh_views(meshes: dict, path) -> Path:
    """Front and side vertex projections of a few meshes."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.0, 4.0))
        for name, m in meshes.items():
            v = m.vertices
            axes[0].scatter(v[:, 0], v[:, 1], s=0.5, label=name)
            axes[1].scatter(v[:, 2], v[:, 1], s=0.5)
        for ax, lab in zip(axes, ("x", "z")):
            ax.set_aspect("equal")
            ax.set_xlabel(lab)
            ax.set_ylabel("y")
        axes[0].legend(markerscale=8)
        return _save(fig, path)
