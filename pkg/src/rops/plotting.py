"""Figures rendered next to the CSV tables.

Every function takes already-computed results, draws one figure and writes it
to ``path``. The Agg backend and stripped PNG metadata keep reruns identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def new_figure(width=6.0, nrows=1, ncols=1, height=None):
    plt.rcParams.update(STYLE)
    height = width * GOLDEN if height is None else height
    return plt.subplots(nrows=nrows, ncols=ncols, figsize=(width, height), squeeze=False)


def save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_cost_fan(ensemble, path, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)):
    """Quantile bands of cumulative plan cost over time."""
    t = ensemble.grid.times
    qs = np.quantile(ensemble.plan_S, quantiles, axis=0)
    fig, ax = new_figure()
    ax = ax[0, 0]
    k = len(quantiles)
    for i in range(k // 2):
        ax.fill_between(t, qs[i], qs[k - 1 - i], color="C0", alpha=0.15 + 0.15 * i, lw=0,
                        label=f"{quantiles[i]:.0%}-{quantiles[k - 1 - i]:.0%}")
    if k % 2:
        ax.plot(t, qs[k // 2], color="C0", lw=1.5, label="median")
    ax.set_xlabel("t")
    ax.set_ylabel("cumulative cost S(t)")
    ax.legend(loc="upper left", frameon=False)
    return save(fig, path)


def plot_histograms(hists, path, max_panels=6):
    live = [h for h in hists if not h.flag]
    if not live:
        live = hists
    pick = [live[i] for i in np.unique(np.linspace(0, len(live) - 1, min(max_panels, len(live))).astype(int))]
    ncols = min(3, len(pick))
    nrows = int(np.ceil(len(pick) / ncols))
    fig, axes = new_figure(width=3.0 * ncols, nrows=nrows, ncols=ncols, height=2.2 * nrows)
    for ax, h in zip(axes.ravel(), pick):
        widths = np.diff(h.bin_edges)
        ax.bar(h.bin_edges[:-1], h.mass / widths, width=widths, align="edge", color="C1", alpha=0.8)
        ax.set_title(f"node {h.node}, t={h.t:g}" + (f" ({h.flag})" if h.flag else ""))
        ax.set_xlabel("dS")
    for ax in axes.ravel()[len(pick):]:
        ax.set_visible(False)
    return save(fig, path)


def plot_cpd_coefficients(cpd, path):
    t = cpd.grid.times[1:]
    fig, axes = new_figure(width=7.0, ncols=2, height=3.0)
    for i in range(cpd.f_coeffs.shape[1]):
        axes[0, 0].plot(t, cpd.f_coeffs[:, i], marker=".", label=f"x_f{i}")
    for i in range(cpd.g_coeffs.shape[1]):
        axes[0, 1].plot(t, cpd.g_coeffs[:, i], marker=".", label=f"x_g{i}")
    axes[0, 0].set_title("drift coefficients")
    axes[0, 1].set_title("diffusion coefficients")
    for ax in axes[0]:
        ax.set_xlabel("t")
        ax.legend(frameon=False)
    return save(fig, path)


def plot_option_convergence(steps, values, path, reference=None):
    fig, ax = new_figure(width=5.0)
    ax = ax[0, 0]
    ax.plot(steps, values, marker="o", color="C2")
    if reference is not None:
        ax.axhline(reference, color="k", lw=0.8, ls="--", label="closed form")
        ax.legend(frameon=False)
    ax.set_xscale("log")
    ax.set_xlabel("tree steps N")
    ax.set_ylabel("option value")
    return save(fig, path)


def plot_anneal_trace(values, best, path):
    fig, ax = new_figure(width=5.5)
    ax = ax[0, 0]
    idx = np.arange(len(values))
    finite = np.isfinite(values)
    ax.plot(idx[finite], np.asarray(values)[finite], ".", ms=2, color="0.6", label="evaluated")
    ax.plot(idx, best, color="C3", lw=1.5, label="best so far")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("objective")
    ax.legend(frameon=False)
    return save(fig, path)


def plot_correlation(corr, labels, path):
    k = len(labels)
    fig, ax = new_figure(width=1.2 * k + 2.5, height=1.2 * k + 1.5)
    ax = ax[0, 0]
    im = ax.imshow(corr, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(k), labels)
    ax.set_yticks(range(k), labels)
    for i in range(k):
        for j in range(k):
            ax.text(j, i, f"{corr[i, j]:.2f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8, label="normal-score correlation")
    return save(fig, path)
