"""Static figures (PNG) for phantoms, sinograms, recordings and sweeps.

Figures are rendered with the Agg backend and saved without software or date
metadata so that re-rendering the same data gives identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "dynffl",
}
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def image_figure(path, values, half_width: float, title: str = "", clamp: bool = False,
                 cmap: str = "viridis"):
    """Concentration image with mm axes; ``clamp`` limits the color range to [0, 1]."""
    v = np.asarray(values, float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        ext = np.array([-half_width, half_width, -half_width, half_width]) * 1e3
        kw = {"vmin": 0.0, "vmax": 1.0} if clamp else {}
        im = ax.imshow(v, extent=ext, origin="upper", cmap=cmap, interpolation="nearest", **kw)
        ax.set_xlabel("x [mm]")
        ax.set_ylabel("y [mm]")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        fig.tight_layout()
        _save(fig, path)


def sinogram_figure(path, values, angles, displacements, title: str = ""):
    """Reduced sinogram: displacement sample on the vertical axis, angle horizontal."""
    v = np.asarray(values, float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        ext = [np.degrees(angles[0]), np.degrees(angles[-1]),
               displacements[-1] * 1e3, displacements[0] * 1e3]
        im = ax.imshow(v.T * 1e3, extent=ext, aspect="auto", origin="upper", cmap="magma",
                       interpolation="nearest")
        ax.set_xlabel("FFL angle [deg]")
        ax.set_ylabel("s [mm]")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="[mm]")
        fig.tight_layout()
        _save(fig, path)


def recording_figure(path, values, sampling_frequency: float, title: str = ""):
    """Concatenated voltage traces per receive channel."""
    v = np.asarray(values, float)
    L = v.shape[0]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(L, 1, figsize=(6.0, 1.6 * L), sharex=True, squeeze=False)
        for l in range(L):
            trace = v[l].ravel()
            t = np.arange(trace.size) / sampling_frequency * 1e6
            axes[l, 0].plot(t, trace, lw=0.6, color="k")
            axes[l, 0].set_ylabel(f"u_{l + 1}")
        axes[-1, 0].set_xlabel("sample time [us, angles concatenated]")
        if title:
            axes[0, 0].set_title(title)
        fig.tight_layout()
        _save(fig, path)


def sweep_figure(path, alpha1, alpha2, table, metric: str):
    """Heat map of a sweep metric over the ``alpha1 x alpha2`` grid."""
    z = np.asarray(table, float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        im = ax.imshow(z, aspect="auto", origin="lower", cmap="viridis",
                       interpolation="nearest")
        ax.set_yticks(range(len(alpha1)))
        ax.set_yticklabels([f"{a:.0e}" for a in alpha1])
        step = max(1, len(alpha2) // 5)
        ax.set_xticks(range(0, len(alpha2), step))
        ax.set_xticklabels([f"{a:.1e}" for a in alpha2[::step]])
        ax.set_ylabel("alpha1")
        ax.set_xlabel("alpha2")
        fig.colorbar(im, ax=ax, label=metric)
        fig.tight_layout()
        _save(fig, path)
