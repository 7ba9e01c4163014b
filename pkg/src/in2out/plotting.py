"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .masking import band_width  # noqa: E402

plt.rcParams.update(
    {
        "figure.dpi": 110,
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "axes.grid": True,
        "grid.alpha": 0.3,
    }
)

LOSS_PANELS = (("rec_hole", "rec_valid"), ("d_loss",), ("adv",), ("total_g",))


def _smooth(v, window=10):
    v = np.asarray(v, dtype=float)
    if len(v) < window:
        return np.arange(len(v)), v
    return np.arange(window - 1, len(v)), np.convolve(v, np.ones(window) / window, mode="valid")


def loss_curves(records: list[dict], path, title: str | None = None) -> Path:
    """One panel per loss family; raw values faint, 10-step moving average solid."""
    fig, axes = plt.subplots(1, len(LOSS_PANELS), figsize=(3.2 * len(LOSS_PANELS), 2.8))
    it = np.array([r["iter"] for r in records])
    for ax, keys in zip(axes, LOSS_PANELS):
        for key in keys:
            vals = [r.get(key, np.nan) for r in records]
            line = ax.plot(it, vals, alpha=0.25, lw=0.8)[0]
            x, y = _smooth(vals)
            ax.plot(it[x] if len(it) else x, y, color=line.get_color(), lw=1.5, label=key)
        ax.set_xlabel("iteration")
        ax.legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def ablation_chart(rows: list[dict], path) -> Path:
    """PSNR / SSIM / FVD bars per design, in table order."""
    labels = [r["label"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, (key, arrow) in zip(axes, (("psnr", "↑"), ("ssim", "↑"), ("fvd", "↓"))):
        vals = [r.get(key) if r.get(key) is not None else np.nan for r in rows]
        colors = ["tab:red" if r["status"] != "ok" else "tab:blue" for r in rows]
        ax.bar(range(len(rows)), vals, color=colors)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=35, ha="right")
        ax.set_title(f"{key.upper()} {arrow}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def outpaint_strip(target: np.ndarray, pred: np.ndarray, m: float, path, frame: int = 0) -> Path:
    """Ground truth, masked input and output for one frame; bands marked on top."""
    gt = np.transpose(target[frame], (1, 2, 0))
    out = np.transpose(pred[frame], (1, 2, 0))
    w = gt.shape[1]
    b = band_width(m, w)
    masked = gt.copy()
    masked[:, :b] = 0
    masked[:, w - b :] = 0
    fig, axes = plt.subplots(1, 3, figsize=(9, 2.4))
    for ax, img, name in zip(axes, (gt, masked, out), ("ground truth", "input", "output")):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.plot([0, b - 0.5], [0, 0], color="yellow", lw=3)
        ax.plot([w - b - 0.5, w - 1], [0, 0], color="yellow", lw=3)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
