"""Figures for experiment reports (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _snr_label(snr):
    return "noiseless" if snr is None else f"{snr:g} dB"


def plot_error_curves(rows, path) -> Path:
    """Mean squared error of the deepest layer against ell1, one line per algorithm and SNR."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["algo"], r["snr_db"]) for r in rows}, key=lambda k: (k[0], -1e9 if k[1] is None else k[1]))
    for algo, snr in keys:
        sel = sorted((r for r in rows if r["algo"] == algo and r["snr_db"] == snr), key=lambda r: r["ell1"])
        ax.errorbar(
            [r["ell1"] for r in sel], [r["mean_sq_err"] for r in sel],
            yerr=[2 * r["stderr_sq_err"] for r in sel], marker="o", capsize=3,
            label=f"{algo}, {_snr_label(snr)}",
        )
    ax.set_xlabel(r"$\ell_1$")
    ax.set_ylabel(r"mean $\|\hat\gamma_2-\gamma_2\|_2^2$")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ratio(ratios, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for snr in sorted({r["snr_db"] for r in ratios}, key=lambda s: -1e9 if s is None else s):
        sel = sorted((r for r in ratios if r["snr_db"] == snr), key=lambda r: r["ell1"])
        ax.errorbar([r["ell1"] for r in sel], [r["ratio"] for r in sel],
                    yerr=[2 * r["stderr"] for r in sel], marker="o", capsize=3, label=_snr_label(snr))
    ax.axhline(1.0, color="grey", lw=0.8)
    ax.set_xlabel(r"$\ell_1$")
    ax.set_ylabel("holistic / projection MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_surface(rows, algo, snr, path) -> Path:
    """Error heat map over the (ell1, s2) grid."""
    sel = [r for r in rows if r["algo"] == algo and r["snr_db"] == snr]
    l1 = sorted({r["ell1"] for r in sel})
    s2 = sorted({r["s2"] for r in sel})
    Z = np.full((len(s2), len(l1)), np.nan)
    for r in sel:
        Z[s2.index(r["s2"]), l1.index(r["ell1"])] = r["mean_sq_err"]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(np.log10(Z), origin="lower", aspect="auto",
                   extent=(l1[0] - 0.5, l1[-1] + 0.5, s2[0] - 0.5, s2[-1] + 0.5))
    fig.colorbar(im, ax=ax, label="log10 mean squared error")
    ax.set_xlabel(r"$\ell_1$")
    ax.set_ylabel(r"$s_2$")
    ax.set_title(f"{algo}, {_snr_label(snr)}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_report(rows, ratios, out_dir) -> list:
    out = Path(out_dir)
    paths = [plot_error_curves(rows, out / "error_vs_ell1.png")]
    if ratios:
        paths.append(plot_ratio(ratios, out / "ratio_vs_ell1.png"))
    for algo in sorted({r["algo"] for r in rows}):
        for snr in {r["snr_db"] for r in rows}:
            sel = [r for r in rows if r["algo"] == algo and r["snr_db"] == snr]
            if len({r["s2"] for r in sel}) > 1 and len({r["ell1"] for r in sel}) > 1 and len(sel) > len({r["ell1"] for r in sel}):
                tag = "noiseless" if snr is None else f"{snr:g}dB"
                paths.append(plot_surface(rows, algo, snr, out / f"surface_{algo}_{tag}.png"))
    return paths
