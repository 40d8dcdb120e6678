"""Optional PNG rendering of trajectory and learning-trace CSV data.

Only used when the command line asks for ``--figures``; the non-interactive
Agg backend is selected so no display is needed.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _columns(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    head, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(head):
        vals = [r[j] for r in body]
        cols[name] = np.array([float(v) if v != "" else np.nan for v in vals])
    return cols


def plot_trajectories(csv_texts: dict, path) -> Path:
    """States over time for several trajectories sharing a time grid."""
    path = Path(path)
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for label, text in csv_texts.items():
        c = _columns(text)
        for ax, key in zip(axes, ("x1", "x2")):
            if key in c:
                ax.plot(c["t"], c[key], lw=0.8, label=label)
    for ax, key in zip(axes, ("x1", "x2")):
        ax.set_ylabel(key)
    axes[-1].set_xlabel("t [s]")
    axes[0].legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trace(trace_csv: str, path, prefix: str = "eta") -> Path:
    """Learned weights per player from a learning-trace CSV."""
    path = Path(path)
    c = _columns(trace_csv)
    players = sorted(set(c["player"].astype(int)))
    fig, axes = plt.subplots(len(players), 1, figsize=(8, 2.6 * len(players)), sharex=True, squeeze=False)
    for ax, p in zip(axes[:, 0], players):
        sel = c["player"] == p
        for name in sorted(k for k in c if k.startswith(prefix)):
            y = c[name][sel]
            if np.any(np.isfinite(y)):
                ax.plot(c["t"][sel], y, lw=0.8, label=name)
        ax.set_ylabel(f"player {p}")
        ax.legend(fontsize=7, ncol=4, loc="upper right")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
