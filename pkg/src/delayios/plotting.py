"""Figures written next to the CSV/JSON artifacts. Figures are artifacts, not an API."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "delayios",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None}
    fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def plot_trajectory(times, states, outputs, path, title: str = "", Y=None) -> Path:
    """States and outputs against time on two stacked panels."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.0))
        states = np.atleast_2d(np.asarray(states).T).T
        for i in range(states.shape[1]):
            ax0.plot(times, states[:, i], label=f"x_{i + 1}")
        ax0.set_ylabel("state")
        ax0.legend(loc="upper right", ncol=min(4, states.shape[1]))
        outputs = np.atleast_2d(np.asarray(outputs).T).T
        for j in range(outputs.shape[1]):
            ax1.plot(times, outputs[:, j], label=f"y_{j + 1}")
        if Y is not None:
            ax1.plot(times, Y, "k--", lw=0.9, label="Y (window max)")
        ax1.set_xlabel("t")
        ax1.set_ylabel("output")
        ax1.legend(loc="upper right")
        if title:
            ax0.set_title(title)
        return _save(fig, path)


def plot_envelope(times, values, bound, path, title: str = "", log: bool = False, witness=None) -> Path:
    """Ensemble |y| traces under a candidate bound; an optional witness is highlighted."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        values = np.asarray(values)
        ax.plot(times, values, color="0.55", lw=0.5, alpha=0.6)
        if bound is not None:
            bound = np.asarray(bound)
            if bound.ndim == 1:
                ax.plot(times, bound, "C3", lw=1.4, label="bound")
            else:
                ax.plot(times, bound.max(axis=1), "C3", lw=1.4, label="bound (max over members)")
        if witness is not None:
            i = int(witness)
            ax.plot(times, values[:, i], "C0", lw=1.6, label=f"witness member {i}")
        if log:
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel("|y(t)|")
        if title:
            ax.set_title(title)
        if bound is not None or witness is not None:
            ax.legend(loc="upper right")
        return _save(fig, path)


def plot_function(fn, path, lo: float = 1e-3, hi: float = 1e3, label: str = "", ref=None) -> Path:
    """A comparison function on log-log axes, optionally against a reference curve."""
    s = np.logspace(np.log10(lo), np.log10(hi), 200)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(s, fn(s), label=label or getattr(fn, "name", "f"))
        if ref is not None:
            ax.loglog(s, ref(s), "k--", lw=0.9, label="reference")
        ax.set_xlabel("s")
        ax.legend(loc="upper left")
        return _save(fig, path)
