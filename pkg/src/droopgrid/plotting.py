"""Optional figures written next to the CSV/JSON outputs.

Uses the non-interactive Agg backend.  PNG metadata is stripped so repeated
runs produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 150,
    "svg.hashsalt": "droopgrid",
}
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_META if path.suffix.lower() == ".png" else None)
    plt.close(fig)
    return path


def plot_trajectory(traj, path, buses=None, frame_omega=None) -> Path:
    """Angle (synchronous frame, deviation from t=0) and voltage panels."""
    buses = range(traj.n) if buses is None else buses
    w = traj.metadata.get("frame_omega", 0.0) if frame_omega is None else frame_omega
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.2))
        for i in buses:
            th = traj.theta[i] - w * traj.t
            ax1.plot(traj.t, np.degrees(th - th[0]), label=f"bus {i + 1}")
            ax2.plot(traj.t, traj.V[i], label=f"bus {i + 1}")
        ax1.set_ylabel(r"$\Delta\theta$ (deg)")
        ax2.set_ylabel(r"$V$ (p.u.)")
        ax2.set_xlabel("t (s)")
        ax1.legend(ncol=3, loc="best")
        fig.tight_layout()
        return _save(fig, path)


def plot_sweep(runs, path, param: str, buses=(1,)) -> Path:
    """Overlay the angle and voltage responses of each sweep run for the chosen buses."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.2))
        for run in runs:
            tr = run.trajectory
            w = tr.metadata.get("frame_omega", 0.0)
            for i in buses:
                th = tr.theta[i] - w * tr.t
                lab = f"{param}={run.value:g}, bus {i + 1}"
                ax1.plot(tr.t, np.degrees(th - th[0]), label=lab)
                ax2.plot(tr.t, tr.V[i], label=lab)
        ax1.set_ylabel(r"$\Delta\theta$ (deg)")
        ax2.set_ylabel(r"$V$ (p.u.)")
        ax2.set_xlabel("t (s)")
        ax1.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)


def plot_spectrum(eigs, path, title: str = "") -> Path:
    eigs = np.asarray(eigs)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.2))
        ax.plot(eigs.real, eigs.imag, "x")
        ax.axvline(0.0, color="k", linewidth=0.6)
        ax.set_xscale("symlog", linthresh=1.0)
        ax.set_xlabel(r"Re $\lambda$")
        ax.set_ylabel(r"Im $\lambda$")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
