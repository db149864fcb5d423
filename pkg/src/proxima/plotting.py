"""Static matplotlib figures written to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_learning_curves(band_rows, out_path, series="mean_episode_return") -> Path:
    """``band_rows``: iterable of (series, x, mean, min, max) tuples."""
    rows = sorted((r for r in band_rows if r[0] == series), key=lambda r: r[1])
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        x, mean, lo, hi = (np.array(col) for col in list(zip(*rows))[1:5])
        ax.plot(x, mean, color="C0")
        ax.fill_between(x, lo, hi, color="C0", alpha=0.25, linewidth=0)
    ax.set_xlabel("timesteps")
    ax.set_ylabel(series)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_clip_geometry(pos_table, neg_table, epsilon, out_path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharex=True)
    for ax, table, title in ((axes[0], pos_table, "A > 0"), (axes[1], neg_table, "A < 0")):
        ax.plot(table[:, 0], table[:, 1], color="C0")
        for edge in (1 - epsilon, 1 + epsilon):
            ax.axvline(edge, color="0.6", linestyle=":", linewidth=1)
        ax.plot([1.0], [np.interp(1.0, table[:, 0], table[:, 1])], "o", color="C3")
        ax.set_title(title)
        ax.set_xlabel("r")
    axes[0].set_ylabel("clipped surrogate term")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_interpolation(sweep, out_path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sweep.alphas, sweep.cpi, label="CPI (unclipped)")
    ax.plot(sweep.alphas, sweep.clip, label=f"clipped, eps={sweep.epsilon:g}")
    ax.plot(sweep.alphas, sweep.kl, label="mean KL")
    ax.plot(sweep.alphas, sweep.klpen, label=f"KL-penalized, beta={sweep.beta:g}")
    ax.axvline(1.0, color="0.6", linestyle=":", linewidth=1)
    ax.set_xlabel("interpolation factor")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_suite(result, out_path) -> Path:
    variants = list(result.per_variant)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(variants)), [result.per_variant[v] for v in variants], color="C0")
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants)
    ax.axhline(0.0, color="0.3", linewidth=0.8)
    ax.set_ylabel("avg normalized score")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
