"""Figures for the report path. Everything renders straight to files."""

from __future__ import annotations

import math

import numpy as np
from matplotlib.figure import Figure


def _binned_max(rows, cols, vals, dim, res):
    """Max of ``vals`` over a ``res x res`` grid of matrix blocks."""
    scale = res / dim
    grid = np.zeros((res, res))
    np.maximum.at(grid, ((rows * scale).astype(int), (cols * scale).astype(int)), vals)
    return grid


def plot_theta_magnitude(theta, path, res: int = 512, floor: float = 1e-8, title=None):
    """log10 |Theta| with block-max downsampling for large matrices."""
    m = theta.matrix.tocoo()
    res = min(res, theta.dim)
    grid = _binned_max(m.row, m.col, np.abs(m.data), theta.dim, res)
    fig = Figure(figsize=(6, 5))
    ax = fig.subplots()
    im = ax.imshow(np.log10(np.maximum(grid, floor)), cmap="magma", interpolation="nearest",
                   extent=(0, theta.dim, theta.dim, 0))
    fig.colorbar(im, ax=ax, label="log10 |theta|")
    ax.set_title(title or f"{theta.family}, J={theta.levels}, nnz={theta.nnz}")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_spy(matrix, path, res: int = 512, title=None):
    """Occupancy picture of a sparse matrix or :class:`PatternMask`."""
    m = getattr(matrix, "matrix", matrix).tocoo()
    dim = m.shape[0]
    res = min(res, dim)
    grid = _binned_max(m.row, m.col, np.ones(m.nnz), dim, res)
    fig = Figure(figsize=(5, 5))
    ax = fig.subplots()
    ax.imshow(grid, cmap="Greys", interpolation="nearest", extent=(0, dim, dim, 0), vmin=0, vmax=1)
    ax.set_title(title or f"nnz={m.nnz} ({m.nnz / dim:.2f} per row)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_images(images: dict, path, ncols: int = 3):
    """Grid of grayscale panels; keys become panel titles."""
    n = len(images)
    ncols = min(ncols, n)
    nrows = math.ceil(n / ncols)
    fig = Figure(figsize=(3.2 * ncols, 3.4 * nrows))
    axes = np.atleast_1d(fig.subplots(nrows, ncols)).ravel()
    for ax, (label, img) in zip(axes, images.items()):
        ax.imshow(np.clip(img, 0, 1), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(label, fontsize=9)
    for ax in axes:
        ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_decay(report, path):
    """|theta| against distance / support length, with the fitted envelope."""
    fig = Figure(figsize=(6, 4.5))
    ax = fig.subplots()
    x = report.scaled_dist
    for lv in np.unique(report.levels_row):
        sel = report.levels_row == lv
        ax.loglog(x[sel], report.abs_theta[sel], ".", ms=2, alpha=0.4, label=f"row level {lv}")
    xs = np.geomspace(x.min(), x.max(), 50)
    ax.loglog(xs, np.exp(report.intercept) * xs**report.slope, "k--", label=f"fit slope {report.slope:.2f}")
    ax.set_xlabel("distance / support length")
    ax.set_ylabel("|theta|")
    ax.set_title(f"M={report.vanishing_moments}, threshold {report.slope_threshold:.1f}")
    ax.legend(fontsize=7)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_scaling(result, path):
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    px = np.asarray(result.pixels, dtype=float)
    t = np.asarray(result.times_ms)
    ax.loglog(px, t, "o-", label=f"slope {result.slope:.2f}")
    ax.loglog(px, t[0] * px / px[0], ":", color="gray", label="linear")
    ax.set_xlabel("pixels")
    ax.set_ylabel("apply time [ms]")
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_error_curve(ks, errors, path):
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    ax.semilogy(ks, errors, "o-")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("k (entries kept per row)")
    ax.set_ylabel("relative operator error")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path
