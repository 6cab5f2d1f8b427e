"""Figures written next to the CSV outputs of each CLI report."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

SAMPLE_COLOR = "#4a90d9"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def loss_curve(history, path, smooth: int = 50) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        steps = np.arange(1, len(history) + 1)
        ax.plot(steps, history, color="0.8", lw=0.6)
        if len(history) >= smooth:
            kernel = np.ones(smooth) / smooth
            ax.plot(steps[smooth - 1:], np.convolve(history, kernel, mode="valid"), color="k", lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        return _save(fig, path)


def regression_samples(model, task, context_sizes, path, n_samples: int = 8, rng=None,
                       interval=(-2.0, 2.0)) -> Path:
    """One panel per context size: ground truth, context points, sampled curves."""
    rng = rng if rng is not None else np.random.default_rng(0)
    order = np.argsort(task.xs[:, 0])
    grid = np.linspace(interval[0], interval[1], 200)[:, None]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(context_sizes), figsize=(3 * len(context_sizes), 2.6),
                                 sharey=True, squeeze=False)
        for ax, n in zip(axes[0], context_sizes):
            ctx = np.hstack([task.xs[:n], task.ys[:n]])
            for pred in model.predict(ctx, grid, n_samples, rng):
                ax.plot(grid[:, 0], pred.mean[:, 0], color=SAMPLE_COLOR, alpha=0.5, lw=0.8)
            ax.plot(task.xs[order, 0], task.ys[order, 0], "k:", lw=1)
            ax.plot(ctx[:, 0], ctx[:, 1], "ko", ms=3)
            ax.set_title(f"{n} context")
            ax.set_xlabel("x")
        axes[0][0].set_ylabel("y")
        return _save(fig, path)


def context_sweep(sizes, std_values, mse_values, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 2.8))
        ax1.plot(sizes, std_values, "o-", color="k")
        ax1.set_xscale("log")
        ax1.set_xlabel("context points")
        ax1.set_ylabel("mean predictive std")
        ax2.plot(sizes, mse_values, "o-", color="k")
        ax2.set_xscale("log")
        ax2.set_xlabel("context points")
        ax2.set_ylabel("MSE of predictive mean")
        fig.tight_layout()
        return _save(fig, path)


def bo_summary(summary_rows, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        names = [r["method"] for r in summary_rows]
        ax.bar(names, [r["normalized_steps"] for r in summary_rows],
               yerr=[r["stderr"] for r in summary_rows], color="0.6", capsize=3)
        ax.axhline(1.0, color="k", lw=0.6, ls="--")
        ax.set_ylabel("steps / random-search steps")
        return _save(fig, path)


def bandit_regret(rows, path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.8), sharey=False)
        for ax, metric in zip(axes, ("cumulative_regret", "simple_regret")):
            for agent in sorted({r["agent"] for r in rows}):
                sel = [r for r in rows if r["metric"] == metric and r["agent"] == agent]
                ax.errorbar([r["delta"] for r in sel], [r["mean"] for r in sel],
                            yerr=[r["stderr"] for r in sel], marker="o", capsize=2, label=agent)
            ax.set_xlabel("delta")
            ax.set_title(metric.replace("_", " "))
        axes[0].set_ylabel("regret (uniform = 100)")
        axes[0].legend()
        fig.tight_layout()
        return _save(fig, path)


def completion_grid(truth, context_mask, samples_by_count, path) -> Path:
    """Rows are latent samples, columns are context counts; a first column shows the context."""
    counts = list(samples_by_count)
    n_rows = len(next(iter(samples_by_count.values())))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n_rows + 1, len(counts) + 1,
                                 figsize=(1.2 * (len(counts) + 1), 1.2 * (n_rows + 1)), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        axes[0][0].imshow(truth, cmap="gray", vmin=0, vmax=1)
        axes[0][0].set_title("target", fontsize=7)
        for j, count in enumerate(counts, start=1):
            shown = np.where(context_mask[count], truth, np.nan)
            cmap = plt.get_cmap("gray").copy()
            cmap.set_bad("#3060a0")
            axes[0][j].imshow(shown, cmap=cmap, vmin=0, vmax=1)
            axes[0][j].set_title(f"{count} ctx", fontsize=7)
            for i, img in enumerate(samples_by_count[count], start=1):
                axes[i][j].imshow(np.clip(img, 0, 1), cmap="gray", vmin=0, vmax=1)
        return _save(fig, path)
