"""Report figures written as PNG files next to the CSV/JSON outputs.

Figures are drawn on bare :class:`~matplotlib.figure.Figure` objects with
the Agg canvas, so nothing touches pyplot state and no display is needed.
"""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

GOLDEN_RATIO = 0.5 * (1.0 + 5 ** 0.5)

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "voxsource",
}


@contextmanager
def figure(width: float = 6.0, height: float | None = None, ncols: int = 1):
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(width, height or width / GOLDEN_RATIO))
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, ncols, squeeze=False)[0]
        yield fig, axes


def save(fig: Figure, path: str | Path, metadata: dict | None = None) -> Path:
    """Write ``fig`` as PNG atomically, embedding ``metadata`` as a text chunk.

    The Software chunk is dropped so output bytes only depend on content.
    """
    path = Path(path)
    info = {"Software": None}
    if metadata:
        info["Description"] = json.dumps(metadata, sort_keys=True)
    fig.tight_layout()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata=info)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_histograms(reports, path, xlabel: str, title: str = "", annotation: str | None = None,
                    log_x: bool = False, metadata: dict | None = None) -> Path:
    """Overlay cohort histograms as step curves (probability per bin)."""
    with figure() as (fig, (ax,)):
        for rep in reports:
            e = rep.histogram.bin_edges
            p = rep.histogram.probabilities
            ax.stairs(p, e, label=f"{rep.name} (n={rep.count})")
        if log_x:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("probability")
        if title:
            ax.set_title(title)
        if annotation:
            ax.text(0.98, 0.95, annotation, transform=ax.transAxes, ha="right", va="top")
        ax.legend(loc="upper left", frameon=False)
        return save(fig, path, metadata)


def plot_pov_separation(rep_a, rep_b, distance: float, path, title: str = "",
                        metadata: dict | None = None) -> Path:
    label = "$D_B$ = inf" if not np.isfinite(distance) else f"$D_B$ = {distance:.3f}"
    return plot_histograms([rep_a, rep_b], path, "POV feature (low = voiced)", title, label, metadata=metadata)


def plot_tuning(result, path, metadata: dict | None = None) -> Path:
    """GPE heat map over the (max_f0, lowpass) grid, FPE printed in each cell."""
    max_f0 = sorted({m for m, _ in result.grid})
    cutoffs = sorted({c for _, c in result.grid})
    gpe = np.full((len(cutoffs), len(max_f0)), np.nan)
    for (m, c), r in result.scores.items():
        gpe[cutoffs.index(c), max_f0.index(m)] = r.gpe
    with figure(height=2.8) as (fig, (ax,)):
        im = ax.imshow(gpe, origin="lower", aspect="auto", cmap="viridis_r", vmin=0.0, vmax=max(1e-6, np.nanmax(gpe)))
        ax.set_xticks(range(len(max_f0)), [f"{m:g}" for m in max_f0])
        ax.set_yticks(range(len(cutoffs)), [f"{c:g}" for c in cutoffs])
        ax.set_xlabel("max f0 (Hz)")
        ax.set_ylabel("lowpass cutoff (Hz)")
        for (m, c), r in result.scores.items():
            txt = "-" if r.fpe_cents is None else f"{r.fpe_cents:.1f}c"
            weight = "bold" if (m, c) == result.best else "normal"
            ax.text(max_f0.index(m), cutoffs.index(c), txt, ha="center", va="center", fontsize=7,
                    color="w", fontweight=weight)
        fig.colorbar(im, ax=ax, label="GPE")
        return save(fig, path, metadata)


def plot_pitch_track(track, path, reference=None, voiced_threshold: float | None = None,
                     metadata: dict | None = None) -> Path:
    """Pitch contour with POV on an inverted right axis."""
    with figure(height=3.0) as (fig, (ax,)):
        ax.plot(track.time_s, track.pitch_hz, color="C0", label="estimate")
        if reference is not None:
            f0 = np.where(reference.f0_hz > 0, reference.f0_hz, np.nan)
            ax.plot(reference.time_s, f0, color="C1", ls="--", label="reference")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("pitch (Hz)")
        ax.legend(loc="upper left", frameon=False)
        pov_ax = ax.twinx()
        pov_ax.spines["right"].set_visible(True)
        pov_ax.plot(track.time_s, track.pov_feature, color="C2", lw=0.8)
        if voiced_threshold is not None:
            pov_ax.axhline(voiced_threshold, color="C3", lw=0.8, ls=":")
        pov_ax.invert_yaxis()
        pov_ax.set_ylabel("POV feature", color="C2")
        return save(fig, path, metadata)
