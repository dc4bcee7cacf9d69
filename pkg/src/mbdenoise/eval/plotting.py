"""PNG renderings of maps, histograms, loss curves and the attribution scatter.

Figures are built with :class:`matplotlib.figure.Figure` directly (Agg
canvas, no pyplot state), so rendering is safe in headless runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

METHOD_COLORS = {"MBD": "tab:green", "N2N": "tab:blue", "CNNe": "tab:orange", "MPPCA": "tab:purple", "ALGe": "tab:red"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    return path


def _grid(n):
    ncols = min(n, 5)
    return (n + ncols - 1) // ncols, ncols


def plot_maps(maps: dict, path, title="", cmap="gray", vmin=None, vmax=None):
    """One panel per 2D map, shared colour scale."""
    names = list(maps)
    nrows, ncols = _grid(len(names))
    vals = np.concatenate([np.ravel(maps[k]) for k in names])
    vmin = float(vals.min()) if vmin is None else vmin
    vmax = float(vals.max()) if vmax is None else vmax
    fig = Figure(figsize=(2.6 * ncols, 2.6 * nrows + 0.4))
    axes = fig.subplots(nrows, ncols, squeeze=False)
    im = None
    for ax, name in zip(axes.flat, names):
        im = ax.imshow(np.asarray(maps[name]).T, origin="lower", cmap=cmap, vmin=vmin, vmax=vmax)
        ax.set_title(name, fontsize=9)
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    for ax in list(axes.flat)[len(names) :]:
        ax.set_visible(False)
    if im is not None:
        fig.colorbar(im, ax=axes.ravel().tolist(), shrink=0.8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_difference_maps(maps: dict, path, title=""):
    """Signed maps in a symmetric green (positive) / red (negative) scale."""
    lim = max(float(np.max(np.abs(m))) for m in maps.values()) or 1.0
    return plot_maps(maps, path, title=title, cmap="RdYlGn", vmin=-lim, vmax=lim)


def plot_histograms(summaries: dict, path, which="signed", xlim=None):
    """Normalized histograms of the per-method error summaries."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    for name, s in summaries.items():
        h = getattr(s, which)
        dens = h.counts / max(h.total, 1)
        ax.stairs(dens, h.edges, label=f"{name} ({s.fraction_below_one:.3f})", color=METHOD_COLORS.get(name))
    ax.set_xlabel("signed error / sigma" if which == "signed" else "|error| / sigma")
    ax.set_ylabel("fraction of voxels")
    if xlim:
        ax.set_xlim(*xlim)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_loss_curves(curves: dict, path, floor=None):
    """Validation loss per epoch; optional horizontal line at the loss floor."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    for name, vals in curves.items():
        ax.plot(np.arange(1, len(vals) + 1), vals, label=str(name), color=METHOD_COLORS.get(str(name)))
    if floor is not None:
        ax.axhline(floor, color="k", ls="--", lw=1, label="floor")
        top = max(float(np.percentile(v, 90)) for v in curves.values()) if curves else 2 * floor
        ax.set_ylim(0.95 * floor, max(top, 1.05 * floor))
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_attribution(intensities: np.ndarray, winners, path):
    """3D scatter of (b0, b1000, b4000) lesion intensities coloured by best method."""
    fig = Figure(figsize=(5.5, 5))
    ax = fig.add_subplot(projection="3d")
    winners = np.asarray(winners)
    for name in dict.fromkeys(winners):
        sel = winners == name
        ax.scatter(*intensities[sel].T, s=8, label=f"{name} ({sel.mean():.1%})", color=METHOD_COLORS.get(name))
    ax.set_xlabel("b0")
    ax.set_ylabel("b1000")
    ax.set_zlabel("b4000")
    ax.legend(fontsize=8)
    return _save(fig, path)
