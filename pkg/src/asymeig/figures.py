"""Matplotlib rendering of experiment records to files next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.markersize": 4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def apply_style():
    matplotlib.rcParams.update(STYLE)


def plot_metric_family(rows, title):
    """Measured points per seed vs d, with the prediction as a dashed line."""
    apply_style()
    fig, ax = plt.subplots()
    metrics = sorted({r.metric for r in rows})
    cmap = plt.get_cmap("tab10")
    for mi, metric in enumerate(metrics):
        sel = [r for r in rows if r.metric == metric]
        ds = np.array([r.d for r in sel])
        measured = np.array([r.measured for r in sel])
        jitter = (np.array([r.seed for r in sel]) % 7 - 3) * 0.004 * max(
            ds.max() - ds.min(), 1.0
        )
        color = cmap(mi % 10)
        ax.plot(ds + jitter, measured, "o", color=color, alpha=0.55, label=metric)
        with_pred = [(r.d, r.predicted) for r in sel if r.predicted is not None]
        if with_pred:
            grid = sorted(set(with_pred))
            ax.plot([g[0] for g in grid], [g[1] for g in grid], "--",
                    color=color, lw=1.2)
    ax.set_xlabel("d")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(loc="best")
    return fig


def plot_spectrum(values, thresholds=None, title="spectrum"):
    """Complex-plane scatter of eigenvalues with optional threshold circles."""
    apply_style()
    fig, ax = plt.subplots(figsize=(4.4, 4.2))
    values = np.asarray(values, dtype=complex)
    ax.plot(values.real, values.imag, "o", alpha=0.6)
    if thresholds:
        angles = np.linspace(0, 2 * np.pi, 200)
        for name, radius in thresholds.items():
            ax.plot(radius * np.cos(angles), radius * np.sin(angles), "--",
                    lw=1.0, label=f"{name} = {radius:.3g}")
        ax.legend(loc="best")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title(title)
    ax.set_aspect("equal")
    return fig


def render_record(record, config, outdir):
    """One PNG per metric family, saved alongside the delimited output."""
    outdir = Path(outdir)
    families = {}
    for r in record.rows:
        families.setdefault(r.family, []).append(r)
    written = []
    for family, rows in sorted(families.items()):
        fig = plot_metric_family(rows, f"{config.scenario}: {family}")
        path = outdir / f"{config.scenario}_{family}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
