"""PSNR / SSIM and the per-iteration, per-stage evaluation harness."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

PSNR_CAP = 100.0
STAGES = ("free", "prelim", "refine")


def _as_tensor(x):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    return x.detach().to(torch.float64)


def psnr(x, y):
    """Peak signal-to-noise ratio in dB for unit-peak images, capped at ``PSNR_CAP``."""
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = float(((x - y) ** 2).mean())
    if mse == 0:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def gaussian_window(size=11, sigma=1.5):
    r = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(r ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(x, y, window=11, sigma=1.5, data_range=1.0):
    """Mean SSIM of (..., C, H, W) images, averaged over channels.

    Statistics use a normalized Gaussian window over the valid region only.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 2:
        x, y = x[None], y[None]
    h, w = x.shape[-2:]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    x = x.reshape(-1, 1, h, w)
    y = y.reshape(-1, 1, h, w)
    k = gaussian_window(window, sigma)[None, None]
    blur = lambda z: F.conv2d(z, k)
    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(smap.mean(dim=(-2, -1)).mean())


@dataclass
class EvalRecord:
    id: str
    psnr_iter: list = field(default_factory=list)
    ssim_iter: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)   # stage -> (psnr, ssim)

    def row(self):
        out = [self.id, *self.psnr_iter, *self.ssim_iter]
        for stage in STAGES:
            out.extend(self.stages[stage])
        return out


def csv_header(K):
    cols = ["id"] + [f"psnr_iter{k}" for k in range(1, K + 1)] + [f"ssim_iter{k}" for k in range(1, K + 1)]
    for stage in STAGES:
        cols += [f"psnr_{stage}", f"ssim_{stage}"]
    return cols


def mean_row(records):
    rows = np.array([r.row()[1:] for r in records], dtype=np.float64)
    return ["MEAN", *rows.mean(axis=0).tolist()]


@torch.no_grad()
def evaluate_sample(model, sample, K=None):
    trace, stages = model.dehaze(sample.I[None], K)
    J = sample.J
    rec = EvalRecord(sample.id)
    for J_k, _ in trace:
        rec.psnr_iter.append(psnr(J_k[0], J))
        rec.ssim_iter.append(ssim(J_k[0], J))
    outputs = {"free": trace[-1][0][0], "prelim": stages.J_prelim[0], "refine": stages.J_refine[0]}
    for stage, img in outputs.items():
        rec.stages[stage] = (psnr(img, J), ssim(img, J))
    return rec, outputs


def evaluate(model, dataset, out_dir=None, K=None):
    """Evaluate every sample; with ``out_dir`` also write results.csv and stage PNGs.

    The model is switched to eval mode and never updated.
    """
    from prdehaze.data import write_rgb

    model.eval()
    K = K or model.K
    records = []
    for sample in dataset:
        rec, outputs = evaluate_sample(model, sample, K)
        records.append(rec)
        if out_dir is not None:
            for stage, img in outputs.items():
                write_rgb(Path(out_dir) / "out" / stage / f"{sample.id}.png", img)
    if not records:
        raise ValueError("evaluation dataset is empty")
    if out_dir is not None:
        write_results(Path(out_dir) / "results.csv", records, K)
    return records


def write_results(path, records, K):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(csv_header(K))
        for rec in records:
            writer.writerow(rec.row())
        writer.writerow(mean_row(records))


def read_results(path):
    """Parse results.csv into ``(header, per-sample rows, mean row)``."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    parse = lambda r: [r[0], *map(float, r[1:])]
    return header, [parse(r) for r in body[:-1]], parse(body[-1])
