"""Report figures written next to the text reports.

Uses the object API of matplotlib with the Agg canvas, so nothing touches
pyplot's global state and no display is needed.
"""
from __future__ import annotations

import os
from typing import Union

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import fit_regression_line, signed_distances

PathLike = Union[str, os.PathLike]

_META = {"Software": None}


def _save(fig: Figure, path: PathLike) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=_META)


def plot_residuals(chains, report, path: PathLike, image_size=None) -> None:
    """Chains colored by per-line RMS, and signed distance along each line.

    ``chains`` is a list of ``(id, points)``; ``report`` the matching
    :class:`~harpcal.metrics.MeasurementReport`.
    """
    fig = Figure(figsize=(10, 4.5))
    ax_img, ax_res = fig.subplots(1, 2)
    rms = {r.id: r.rms for r in report.per_line}
    vmax = max(rms.values(), default=1.0) or 1.0
    sc = None
    for cid, pts in chains:
        pts = np.asarray(pts)
        sc = ax_img.scatter(pts[:, 0], pts[:, 1], c=np.full(len(pts), rms.get(cid, 0.0)),
                            s=2, vmin=0.0, vmax=vmax, cmap="viridis")
    if sc is not None:
        fig.colorbar(sc, ax=ax_img, label="line RMS (px)")
    ax_img.set_aspect("equal")
    ax_img.invert_yaxis()
    if image_size:
        ax_img.set_xlim(0, image_size[0] - 1)
        ax_img.set_ylim(image_size[1] - 1, 0)
    ax_img.set_xlabel("x (px)")
    ax_img.set_ylabel("y (px)")
    ax_img.set_title(f"d = {report.d:.4g} px, d_max = {report.d_max:.4g} px")

    for cid, pts in chains:
        pts = np.asarray(pts)
        if len(pts) < 2:
            continue
        line, _ = fit_regression_line(pts)
        s = (pts - pts[0]) @ line.direction
        ax_res.plot(np.abs(s), signed_distances(line, pts), lw=0.8)
    ax_res.axhline(0.0, color="k", lw=0.5)
    ax_res.set_xlabel("position along line (px)")
    ax_res.set_ylabel("signed distance (px)")
    fig.tight_layout()
    _save(fig, path)


def plot_high_frequency(signals, path: PathLike) -> None:
    """High-frequency part of each chain's signed distance.

    ``signals`` is a list of ``(id, IntrinsicSignal)``.
    """
    fig = Figure(figsize=(8, 4))
    ax = fig.subplots()
    for cid, sig in signals:
        mask = sig.interior()
        ax.plot(sig.s[mask], sig.high[mask], lw=0.8, label=str(cid))
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("position along line (px)")
    ax.set_ylabel("high-frequency offset (px)")
    if 0 < len(signals) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, path)


def plot_energy(history, path: PathLike, label: str = "energy") -> None:
    """Energy per optimizer iteration on a log scale."""
    fig = Figure(figsize=(5, 3.5))
    ax = fig.subplots()
    h = np.asarray(history, dtype=np.float64)
    ax.semilogy(np.arange(len(h)), np.maximum(h, 1e-300), marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel(label)
    fig.tight_layout()
    _save(fig, path)
