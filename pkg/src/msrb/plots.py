"""Figure rendering for the report path.

Every function takes rows of already-merged table data and writes a PNG next
to the delimited output; nothing here feeds back into the computations.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_error_vs_basis(rows, path):
    """rows: (method, n_basis, eps_v) tuples."""
    fig, ax = plt.subplots(figsize=(6, 4))
    methods = sorted({r[0] for r in rows})
    for m in methods:
        pts = sorted((int(r[1]), float(r[2])) for r in rows if r[0] == m)
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=m)
    ax.set_xlabel("local basis functions per coarse edge")
    ax.set_ylabel("mean relative velocity error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_sample_series(rows, path):
    """rows: (method, sample_index, eps_v) tuples."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for m in sorted({r[0] for r in rows}):
        pts = sorted((int(r[1]), float(r[2])) for r in rows if r[0] == m)
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts],
                    lw=0.8, label=m)
    ax.set_xlabel("sample")
    ax.set_ylabel("relative velocity error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_field(values, path, title=""):
    """Cellwise field as an image; values shaped (ny, nx)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(np.asarray(values), origin="lower", extent=(0, 1, 0, 1),
                   cmap="viridis")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_watercut(times, curves, path, labels=None):
    """Water-cut curves (one per row of `curves`) against time."""
    fig, ax = plt.subplots(figsize=(6, 4))
    curves = np.atleast_2d(curves)
    for i, c in enumerate(curves):
        lbl = labels[i] if labels else None
        ax.plot(times, c, lw=1.0, label=lbl)
    ax.set_xlabel("time")
    ax.set_ylabel("water cut")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    if labels:
        ax.legend()
    return _save(fig, path)


def plot_series(xs, ys, path, xlabel="", ylabel="", logy=False, labels=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ys = np.atleast_2d(ys)
    for i, y in enumerate(ys):
        lbl = labels[i] if labels else None
        if logy:
            ax.semilogy(xs, y, marker="o", label=lbl)
        else:
            ax.plot(xs, y, marker="o", label=lbl)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    if labels:
        ax.legend()
    return _save(fig, path)
