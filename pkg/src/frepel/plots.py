"""Static figures written next to the CSV/JSON results.

Figures use the Agg backend and fixed SVG metadata so reruns emit the same
bytes; they are still excluded from manifest digests.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import flory  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "svg.hashsalt": "frepel",
    "svg.fonttype": "path",
}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, metadata=metadata, bbox_inches="tight")
    plt.close(fig)


def regime_map_figure(path, h_min=0.02, h_max=0.98, d_max=10.0, points=None):
    """Domain of the Flory index in the (H, d) plane.

    Solid red: nu = 1 (d = 2H) and the critical dimension d = 2/H.  Dashed:
    existence boundary d = 1/H.  Green: integer d where the ansatz is physical.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        h = np.linspace(h_min, h_max, 400)
        curves = flory.boundary_curves(h)
        ax.plot(h, curves["nu_equals_one"], color="tab:red", label=r"$\nu_H(d)=1$")
        ax.plot(h, curves["critical"], color="tab:red", ls="-.", label=r"$Hd=2$")
        ax.plot(h, curves["existence"], color="k", ls="--", label=r"$Hd=1$")
        ax.fill_between(h, np.maximum(curves["nu_equals_one"], 0), np.minimum(curves["critical"], d_max),
                        color="tab:green", alpha=0.12, lw=0)
        for d in range(1, int(d_max) + 1):
            seg = h[(flory.flory_nu(h, d) <= 1.0) & (h * d < 2.0)]
            if seg.size:
                ax.plot([seg[0], seg[-1]], [d, d], color="tab:green", lw=2)
        if points:
            hs, ds = zip(*points)
            ax.scatter(hs, ds, s=12, color="tab:blue", zorder=3)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, d_max)
        ax.set_xlabel("Hurst index H")
        ax.set_ylabel("dimension d")
        ax.legend(loc="upper right", fontsize=8)
        _save(fig, path)


def sweep_figure(path, horizons, values, errors, fit=None, hurst=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(horizons, values, yerr=errors, fmt="o", ms=4, capsize=2, label=r"$\langle R^2\rangle$")
        n = np.geomspace(min(horizons), max(horizons), 50)
        if fit is not None:
            ax.plot(n, np.exp(fit.intercept) * n**fit.slope, "-",
                    label=rf"fit $\nu={fit.nu:.3f}\pm{fit.nu_std_error:.3f}$")
        if hurst is not None:
            ref = values[0] * (n / horizons[0]) ** (2 * hurst)
            ax.plot(n, ref, ":", color="gray", label=rf"free, $\nu=H={hurst:g}$")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel(r"$\langle R^2\rangle$")
        ax.legend(fontsize=8)
        _save(fig, path)


def eps_scan_figure(path, eps, z, z_err, r2, r2_err):
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.5))
        ax1.errorbar(eps, z, yerr=z_err, fmt="o-", ms=3)
        ax1.set_ylabel(r"$Z_\varepsilon$")
        ax2.errorbar(eps, r2, yerr=r2_err, fmt="o-", ms=3, color="tab:orange")
        ax2.set_ylabel(r"$\langle R^2\rangle_\varepsilon$")
        ax2.set_xscale("log")
        ax2.set_xlabel(r"$\varepsilon$")
        _save(fig, path)


def slab_figure(path, widths, ratios, ratio_errors, r2_free, fitted_y=None, predicted_y=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.asarray(widths) / np.sqrt(r2_free)
        ax.errorbar(x, ratios, yerr=ratio_errors, fmt="o", ms=4, capsize=2)
        xs = np.geomspace(x.min(), max(x.min() * 10, 1.0), 30)
        if fitted_y is not None:
            ax.plot(xs, xs ** (-fitted_y), "-", label=f"fitted y={fitted_y:.3f}")
        if predicted_y is not None:
            ax.plot(xs, xs ** (-predicted_y), ":", label=f"Flory y={predicted_y:.3f}")
        ax.axhline(1.0, color="gray", lw=0.8)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(r"$D/\sqrt{\langle R^2\rangle}$")
        ax.set_ylabel(r"$\langle R^2\rangle_D/\langle R^2\rangle$")
        if fitted_y is not None or predicted_y is not None:
            ax.legend(fontsize=8)
        _save(fig, path)
