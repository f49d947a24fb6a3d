"""PNG figures for run summaries.  Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}

TUBE_COLOR = "#4c72b0"
BASE_COLOR = "#dd8452"
ROLL_COLOR = "0.55"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_tubes(path, k, nominal: np.ndarray, halfwidth: np.ndarray, labels: Sequence[str],
               rollouts: Optional[np.ndarray] = None, baseline: Optional[tuple] = None):
    """One panel per coordinate: nominal, tube band and (optionally) rollout traces.

    ``nominal`` and ``halfwidth`` are ``(len(k), n)``; ``rollouts`` is
    ``(n_rollouts, len(k), n)``; ``baseline`` is another ``(nominal, halfwidth)``.
    """
    n = len(labels)
    cols = min(n, 4)
    rows = -(-n // cols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.0 * rows), squeeze=False, sharex=True)
        for i, ax in enumerate(axes.flat):
            if i >= n:
                ax.set_visible(False)
                continue
            if rollouts is not None:
                ax.plot(k, rollouts[:, :, i].T, color=ROLL_COLOR, lw=0.4, alpha=0.4)
            if baseline is not None:
                bn, bh = baseline
                ax.fill_between(k, bn[:, i] - bh[:, i], bn[:, i] + bh[:, i], color=BASE_COLOR, alpha=0.18,
                                lw=0, label="baseline tube")
            ax.fill_between(k, nominal[:, i] - halfwidth[:, i], nominal[:, i] + halfwidth[:, i],
                            color=TUBE_COLOR, alpha=0.25, lw=0, label="tube")
            ax.plot(k, nominal[:, i], color=TUBE_COLOR, lw=1.2, label="nominal")
            ax.set_title(labels[i])
        axes.flat[0].legend(loc="best", fontsize=7)
        for ax in axes[-1]:
            ax.set_xlabel("k")
        return _save(fig, path)


def plot_plane(path, nominal: np.ndarray, halfwidth: np.ndarray, rollouts: Optional[np.ndarray] = None,
               envelope=None, bounds=None, obstacles=(), baseline: Optional[np.ndarray] = None,
               labels=("px", "py")):
    """First two coordinates: rollouts, nominal with tube boxes, envelope shading and obstacles."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4.0))
        if envelope is not None and bounds is not None:
            (x0, x1), (y0, y1) = bounds
            gx, gy = np.meshgrid(np.linspace(x0, x1, 120), np.linspace(y0, y1, 120))
            im = ax.pcolormesh(gx, gy, envelope(gx, gy), cmap="Greys", shading="auto", alpha=0.6)
            fig.colorbar(im, ax=ax, label="b(x)", shrink=0.8)
        if rollouts is not None:
            for r in rollouts:
                ax.plot(r[:, 0], r[:, 1], color=ROLL_COLOR, lw=0.4, alpha=0.5)
        for c, rad in obstacles:
            ax.add_patch(plt.Circle(c, rad, color="#c44e52", alpha=0.35, lw=0))
        for (cx, cy), (hx, hy) in zip(nominal[:, :2], halfwidth[:, :2]):
            ax.add_patch(plt.Rectangle((cx - hx, cy - hy), 2 * hx, 2 * hy, fill=False, ec=TUBE_COLOR,
                                       lw=0.5, alpha=0.6))
        if baseline is not None:
            ax.plot(baseline[:, 0], baseline[:, 1], color=BASE_COLOR, lw=1.2, ls="--", label="baseline")
        ax.plot(nominal[:, 0], nominal[:, 1], color=TUBE_COLOR, lw=1.5, label="nominal")
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=7)
        return _save(fig, path)


def plot_scaling(path, T, riccati_ms, oracle_ms):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        T = np.asarray(T, float)
        ax.loglog(T, riccati_ms, "o-", color=TUBE_COLOR, label="Riccati")
        ok = np.isfinite(np.asarray(oracle_ms, float))
        if ok.any():
            ax.loglog(T[ok], np.asarray(oracle_ms, float)[ok], "s-", color=BASE_COLOR, label="dense oracle")
        ax.set_xlabel("horizon T")
        ax.set_ylabel("wall time [ms]")
        ax.legend()
        return _save(fig, path)


def plot_iterations(path, iteration, step_norm, violation):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.semilogy(iteration, step_norm, "o-", color=TUBE_COLOR, label="step norm")
        v = np.asarray(violation, float)
        if np.any(v > 0):
            ax.semilogy(iteration, np.where(v > 0, v, np.nan), "s--", color=BASE_COLOR, label="violation")
        ax.set_xlabel("SCP iteration")
        ax.legend()
        return _save(fig, path)


def plot_envelope_fit(path, x, r, grid, fitted, truth=None, label="px"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.scatter(x, r, s=4, color=ROLL_COLOR, label="residuals")
        ax.plot(grid, fitted, color=TUBE_COLOR, lw=1.5, label="fitted b")
        if truth is not None:
            ax.plot(grid, truth, color=BASE_COLOR, lw=1.0, ls="--", label="true envelope")
        ax.set_xlabel(label)
        ax.set_ylabel("residual")
        ax.legend()
        return _save(fig, path)
