"""Figures written next to reports: prediction montages, metric bars, loss curves.

All rendering goes through ``matplotlib.figure.Figure`` with the Agg canvas,
so importing this module never touches the global pyplot backend.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.image import imsave

from .reporting import MetricsReport

GUTTER = 4


def _hwc(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.shape[-1] == 1:
        arr = np.repeat(arr, 3, axis=-1)
    return np.clip(arr, 0.0, 1.0)


def compose_montage(rows: Sequence[Sequence], gutter: int = GUTTER, background: float = 1.0) -> np.ndarray:
    """Tile panels into one (H, W, 3) array with ``gutter`` pixels between panels.

    Every panel must have the same size. ``None`` panels are left blank.
    """
    rows = [[None if p is None else _hwc(p) for p in row] for row in rows]
    panels = [p for row in rows for p in row if p is not None]
    if not panels:
        raise ValueError("montage needs at least one panel")
    h, w = panels[0].shape[:2]
    if any(p.shape[:2] != (h, w) for p in panels):
        raise ValueError("montage panels must share one size")
    ncols = max(len(r) for r in rows)
    canvas = np.full((len(rows) * h + (len(rows) - 1) * gutter, ncols * w + (ncols - 1) * gutter, 3),
                     background)
    for r, row in enumerate(rows):
        for c, panel in enumerate(row):
            if panel is not None:
                y0, x0 = r * (h + gutter), c * (w + gutter)
                canvas[y0:y0 + h, x0:x0 + w] = panel
    return canvas


def save_montage(path, rows, gutter: int = GUTTER) -> Path:
    """Pixel-exact PNG montage (one image pixel per panel pixel)."""
    path = Path(path)
    imsave(path, compose_montage(rows, gutter))
    return path


def save_labeled_montage(path, rows, titles: Sequence[str], row_labels: Optional[Sequence[str]] = None,
                         panel_inches: float = 2.2) -> Path:
    path = Path(path)
    nrows, ncols = len(rows), max(len(r) for r in rows)
    fig = Figure(figsize=(panel_inches * ncols, panel_inches * nrows + 0.4))
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    for r, row in enumerate(rows):
        for c in range(ncols):
            ax = axes[r][c]
            ax.set_xticks([])
            ax.set_yticks([])
            panel = row[c] if c < len(row) else None
            if panel is None:
                ax.set_frame_on(False)
                continue
            ax.imshow(_hwc(panel), interpolation="nearest")
            if r == 0 and c < len(titles):
                ax.set_title(titles[c], fontsize=9)
        if row_labels:
            axes[r][0].set_ylabel(row_labels[r], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    return path


def plot_report(report: MetricsReport, path) -> Path:
    """Side-by-side bars of mean windowed SSIM and RMSE per method."""
    path = Path(path)
    rows = report.rows()
    labels = [r[0] for r in rows]
    fig = Figure(figsize=(max(4.0, 1.4 * len(rows) + 2), 3.2))
    FigureCanvasAgg(fig)
    ax_s, ax_r = fig.subplots(1, 2)
    pos = np.arange(len(rows))
    ax_s.bar(pos, [r[1] for r in rows], color="tab:blue")
    ax_s.set_ylim(min(0.0, min(r[1] for r in rows)), 1.0)
    ax_s.set_title("SSIM (11x11 windowed)", fontsize=9)
    ax_r.bar(pos, [r[2] for r in rows], color="tab:orange")
    ax_r.set_title("RMSE", fontsize=9)
    for ax in (ax_s, ax_r):
        ax.set_xticks(pos)
        ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    return path


def plot_train_log(log, path) -> Path:
    """Loss per optimizer step, one line per step type (U, D, G)."""
    path = Path(path)
    fig = Figure(figsize=(6, 3.2))
    FigureCanvasAgg(fig)
    ax = fig.subplots()
    steps = log.of_kind("step")
    for kind, key in (("U", "loss"), ("D", "d_loss"), ("G", "g_total")):
        recs = [r for r in steps if r["type"] == kind]
        if recs:
            ax.plot([r["step"] for r in recs], [r[key] for r in recs], lw=0.8, label=f"{kind}: {key}")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    if steps:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    return path
