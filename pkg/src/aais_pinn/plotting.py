"""Figure rendering for CLI reports. Always uses the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "image.cmap": "viridis",
}

# no timestamps or version strings, so reruns write identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)


def plot_grid(x1, x2, columns: dict, path, labels=("x1", "x2")):
    """Heatmaps of each named column over a square grid.

    ``x1``/``x2`` are flat coordinate arrays in row-major grid order.
    The residual column is drawn on a log10 scale.
    """
    res = int(round(np.sqrt(len(x1))))
    ext = [x1.min(), x1.max(), x2.min(), x2.max()]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(columns), figsize=(3.1 * len(columns), 2.8))
        for ax, (name, vals) in zip(np.atleast_1d(axes), columns.items()):
            img = np.asarray(vals, dtype=float).reshape(res, res)
            if name == "residual":
                img = np.log10(np.maximum(img, 1e-300))
                name = "log10 residual"
            im = ax.imshow(img, origin="lower", extent=ext, aspect="equal")
            ax.set_title(name)
            ax.set_xlabel(labels[0])
            ax.set_ylabel(labels[1])
            fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        fig.tight_layout()
        _save(fig, path)


def plot_convergence(records: dict, path):
    """Relative L2 and max errors against resampling iteration, one line per seed."""
    with plt.rc_context(STYLE):
        fig, (ax_r, ax_inf) = plt.subplots(1, 2, figsize=(6.4, 2.6))
        for seed, entries in records.items():
            it = [e["iteration"] for e in entries]
            ax_r.semilogy(it, [e["e_r"] for e in entries], marker="o", ms=3, label=f"seed {seed}")
            ax_inf.semilogy(it, [e["e_inf"] for e in entries], marker="o", ms=3)
        ax_r.set_xlabel("iteration")
        ax_r.set_ylabel("relative L2 error")
        ax_inf.set_xlabel("iteration")
        ax_inf.set_ylabel("max error")
        ax_r.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_fit(target, samples, path, res: int = 200):
    """Log target density over the first two coordinates with proposal draws."""
    dom = target.domain
    g1 = np.linspace(dom.lower[0], dom.upper[0], res)
    g2 = np.linspace(dom.lower[1], dom.upper[1], res)
    X1, X2 = np.meshgrid(g1, g2)
    pts = np.zeros((res * res, target.dim))
    pts[:, 0], pts[:, 1] = X1.ravel(), X2.ravel()
    logq = target.log_density(pts).reshape(res, res)
    logq = np.maximum(logq, np.max(logq) - 30.0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.0))
        ax.contourf(X1, X2, logq, levels=20)
        ax.scatter(samples[:, 0], samples[:, 1], s=1.5, c="w", alpha=0.5, lw=0)
        ax.set_xlim(dom.lower[0], dom.upper[0])
        ax.set_ylim(dom.lower[1], dom.upper[1])
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_title("log target and proposal draws")
        fig.tight_layout()
        _save(fig, path)
