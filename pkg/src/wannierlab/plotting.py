"""Optional figures next to the CSV output (needs the ``plot`` extra)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_decay(ax, curves):
    for label, L, prof in curves:
        ok = prof > 0
        ax.semilogy(np.asarray(L)[ok], np.asarray(prof)[ok], "o-", ms=3, lw=1, label=label)
    ax.set_xlabel("word length L")
    ax.set_ylabel("max block norm")
    ax.legend(fontsize=7)


def plot_spectrum(ax, energies, window):
    ax.hist(energies, bins=120, color="0.4")
    ax.axvspan(window.E_lo if np.isfinite(window.E_lo) else energies.min(),
               window.E_hi if np.isfinite(window.E_hi) else energies.max(),
               color="C0", alpha=0.2, label="window")
    ax.set_xlabel("energy")
    ax.set_ylabel("count")
    ax.legend(fontsize=7)


def plot_berry(ax, ks, F):
    im = ax.pcolormesh(ks[..., 0], ks[..., 1], F, shading="auto", cmap="RdBu_r")
    ax.set_xlabel("k1")
    ax.set_ylabel("k2")
    ax.set_aspect("equal")
    return im


def render_figures(results, out):
    """Write decay.png, spectrum.png and (2D abelian) berry.png; returns file names."""
    plt = _pyplot()
    out = Path(out)
    written = []
    panels = {
        "decay.png": [r for r in results if "decay" in r.figures],
        "spectrum.png": [r for r in results if "spectrum" in r.figures],
        "berry.png": [r for r in results if "berry" in r.figures],
    }
    for name, rs in panels.items():
        if not rs:
            continue
        cols = min(len(rs), 4)
        rows = -(-len(rs) // cols)
        fig, axes = plt.subplots(rows, cols, figsize=(3.6 * cols, 3.0 * rows), squeeze=False)
        for ax, r in zip(axes.flat, rs):
            if name == "decay.png":
                plot_decay(ax, r.figures["decay"])
            elif name == "spectrum.png":
                plot_spectrum(ax, *r.figures["spectrum"])
            else:
                im = plot_berry(ax, *r.figures["berry"])
                fig.colorbar(im, ax=ax, shrink=0.8)
            ax.set_title(r.preset, fontsize=9)
        for ax in list(axes.flat)[len(rs):]:
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out / name, dpi=110)
        plt.close(fig)
        written.append(name)
    return written
