"""Figures for CLI reports, rendered off-screen to PNG files."""

import numpy as np
from matplotlib.figure import Figure

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    return path


def plot_trace(trace, out_dir, J_max=None):
    """``J`` and gradient norm against flow time ``s``; returns the written paths."""
    acc = np.asarray(trace.accepted, dtype=bool)
    s = np.asarray(trace.s)[acc]
    J = np.asarray(trace.J)[acc]
    g = np.asarray(trace.grad_norm)[acc]

    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.plot(s, J, lw=1.5)
    if J_max is not None:
        ax.axhline(J_max, color="0.4", ls="--", lw=1, label="orbit maximum")
        ax.legend(loc="lower right", frameon=False)
    ax.set_xlabel("flow time s")
    ax.set_ylabel("J")
    p1 = _save(fig, f"{out_dir}/trace_J.png")

    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.semilogy(s, np.maximum(g, 1e-300), lw=1.5)
    ax.set_xlabel("flow time s")
    ax.set_ylabel("gradient norm")
    p2 = _save(fig, f"{out_dir}/trace_grad.png")
    return [p1, p2]


def plot_landscape(points, path):
    """Critical values coloured by Morse index."""
    vals = np.array([p.value for p in points])
    idx = np.array([p.morse_index for p in points])
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    sc = ax.scatter(np.arange(len(vals)), vals, c=idx, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="Morse index")
    ax.set_xlabel("critical point (ascending J)")
    ax.set_ylabel("J")
    return _save(fig, path)


def plot_spectrum(eigenvalues, path, eps_sing=None):
    ev = np.sort(np.abs(np.asarray(eigenvalues)))[::-1]
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.semilogy(np.arange(1, ev.size + 1), np.maximum(ev, 1e-300), "o-")
    if eps_sing is not None and ev.size:
        ax.axhline(eps_sing * ev[0], color="0.4", ls="--", lw=1, label="singularity threshold")
        ax.legend(frameon=False)
    ax.set_xlabel("index")
    ax.set_ylabel("Gramian eigenvalue")
    return _save(fig, path)
