"""Report figures written next to the CSV outputs."""

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from prdehaze.evaluation import STAGES

STAGE_LABELS = {"free": "model-free", "prelim": "preliminary", "refine": "refined"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_iterations(records, path):
    """Mean PSNR/SSIM of each recurrent iteration."""
    psnrs = np.array([r.psnr_iter for r in records])
    ssims = np.array([r.ssim_iter for r in records])
    k = np.arange(1, psnrs.shape[1] + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.errorbar(k, psnrs.mean(0), yerr=psnrs.std(0), marker="o", capsize=3, color="C0")
    ax.set_xlabel("iteration")
    ax.set_ylabel("PSNR (dB)", color="C0")
    ax.set_xticks(k)
    ax2 = ax.twinx()
    ax2.plot(k, ssims.mean(0), marker="s", ls="--", color="C1")
    ax2.set_ylabel("SSIM", color="C1")
    _save(fig, path)


def plot_stages(records, path):
    """Mean PSNR per stage, with per-sample points."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for i, stage in enumerate(STAGES):
        vals = np.array([r.stages[stage][0] for r in records])
        ax.bar(i, vals.mean(), color=f"C{i}", alpha=0.7)
        jitter = np.linspace(-0.2, 0.2, len(vals)) if len(vals) > 1 else np.zeros(1)
        ax.scatter(i + jitter, vals, s=6, color="k", zorder=3)
    ax.set_xticks(range(len(STAGES)))
    ax.set_xticklabels([STAGE_LABELS[s] for s in STAGES])
    ax.set_ylabel("PSNR (dB)")
    _save(fig, path)


def plot_loss_log(log_path, path, window=100):
    with open(log_path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return
    steps = np.array([int(r["step"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for col in ("total", "loss_u", "loss_v"):
        y = np.array([float(r[col]) for r in rows])
        ax.plot(steps, y, lw=0.5, alpha=0.35)
        if len(y) >= window:
            smooth = np.convolve(y, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1:], smooth, lw=1.2, label=col, color=ax.lines[-1].get_color())
        else:
            ax.lines[-1].set_label(col)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    _save(fig, path)
