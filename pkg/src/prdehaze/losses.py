"""Training objectives for both components and their composition."""

import math
from collections import OrderedDict
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

PROB_EPS = 1e-6


class NonFiniteLoss(FloatingPointError):
    """Raised when a loss term is NaN or infinite; ``term`` names the culprit."""

    def __init__(self, term, value=None):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term


@dataclass
class LossWeights:
    alpha1: float = 1.0     # pixel
    alpha2: float = 0.05    # perceptual
    alpha3: float = 0.005   # adversarial
    alpha4: float = 0.5     # residual vs ground truth
    alpha5: float = 0.5     # residual vs own deviation
    pixel_norm: str = "l1"

    def __post_init__(self):
        alphas = self.alphas
        if any(a < 0 for a in alphas):
            raise ValueError(f"loss weights must be nonnegative, got {alphas}")
        if not any(a > 0 for a in alphas):
            raise ValueError("at least one loss weight must be positive")
        if self.pixel_norm not in ("l1", "l2"):
            raise ValueError(f"pixel_norm must be 'l1' or 'l2', got {self.pixel_norm!r}")

    @property
    def alphas(self):
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5)

    def scaled(self, factor):
        return LossWeights(*(a * factor for a in self.alphas), pixel_norm=self.pixel_norm)


def pixel_loss(x, y, pixel_norm="l1"):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if pixel_norm == "l1":
        return (x - y).abs().mean()
    if pixel_norm == "l2":
        return ((x - y) ** 2).mean()
    raise ValueError(f"unknown pixel_norm {pixel_norm!r}")


class FeatureExtractor(nn.Module):
    """Frozen, seeded, randomly initialized 3-scale conv stack.

    Stands in for pretrained classification features; the weights never train.
    """

    def __init__(self, widths=(8, 16, 32), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        stages, cin = [], 3
        for i, w in enumerate(widths):
            conv = nn.Conv2d(cin, w, 3, 1 if i == 0 else 2, 1)
            with torch.no_grad():
                conv.weight.normal_(0.0, math.sqrt(2.0 / (cin * 9)), generator=gen)
                conv.bias.zero_()
            stages.append(conv)
            cin = w
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)

    def train(self, mode=True):
        return super().train(False)

    def forward(self, x):
        feats = []
        for conv in self.stages:
            # softplus keeps the features smooth for gradient checking
            x = F.softplus(conv(x), beta=4)
            feats.append(x)
        return feats


def perceptual_loss(x, y, extractor):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return sum(((fx - fy) ** 2).mean() for fx, fy in zip(extractor(x), extractor(y)))


class Discriminator(nn.Module):
    """Patch discriminator emitting per-patch probabilities.

    SiLU rather than leaky rectifiers keeps the loss smooth everywhere.
    """

    def __init__(self, width=16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(2 * width, 1, 3, 1, 1),
        )

    def forward(self, x):
        return torch.sigmoid(self.body(x))


def _log_prob(p):
    return torch.log(p.clamp(PROB_EPS, 1 - PROB_EPS))


def discriminator_loss(D, J_real, J_fake):
    """``-mean log D(real) - mean log(1 - D(fake))``; fakes are detached."""
    p_real = D(J_real)
    p_fake = D(J_fake.detach())
    return -_log_prob(p_real).mean() - _log_prob(1 - p_fake).mean()


def generator_loss(D, J_fake):
    """Non-saturating generator loss ``-mean log D(fake)``."""
    return -_log_prob(D(J_fake)).mean()


def adversarial_losses(J_real, J_fake, D):
    """Returns ``(gen_loss, disc_loss)``."""
    gen = generator_loss(D, J_fake)
    disc = discriminator_loss(D, J_real, J_fake)
    for name, v in (("gen_loss", gen), ("disc_loss", disc)):
        if not torch.isfinite(v):
            raise NonFiniteLoss(name, v.item())
    return gen, disc


def loss_u(trace, I, J, weights, extractor=None, D=None):
    """Model-free objective summed over the iterations.

    Residual targets follow ``R = J - I``: the ground-truth residual is
    ``J - I`` and the self-consistency target is ``J_k - I``.
    """
    if len(trace) < 1:
        raise ValueError("trace must hold at least one iteration")
    a1, a2, a3, a4, a5 = weights.alphas
    norm = weights.pixel_norm
    report = OrderedDict()
    total = I.new_zeros(())
    R_gt = J - I
    for k, (J_k, R_k) in enumerate(trace, start=1):
        terms = OrderedDict()
        terms["pixel"] = pixel_loss(J_k, J, norm)
        if a2 > 0:
            if extractor is None:
                raise ValueError("perceptual weight > 0 needs a feature extractor")
            terms["perceptual"] = perceptual_loss(J_k, J, extractor)
        if a3 > 0:
            if D is None:
                raise ValueError("adversarial weight > 0 needs a discriminator")
            terms["adv"] = generator_loss(D, J_k)
        terms["res_gt"] = pixel_loss(R_k, R_gt, norm)
        terms["res_self"] = pixel_loss(R_k, J_k - I, norm)
        w = {"pixel": a1, "perceptual": a2, "adv": a3, "res_gt": a4, "res_self": a5}
        for name, value in terms.items():
            report[f"u{k}_{name}"] = value
            total = total + w[name] * value
    report["loss_u"] = total
    return total, report


def loss_v(stages, J, t_gt=None, pixel_norm="l1"):
    """Scattering-stage objective; transmission terms are dropped when ``t_gt`` is None."""
    report = OrderedDict()
    if t_gt is not None:
        report["v_t"] = pixel_loss(stages.t_hat, t_gt, pixel_norm)
        report["v_t_refine"] = pixel_loss(stages.t_refine, t_gt, pixel_norm)
    report["v_J"] = pixel_loss(stages.J_prelim, J, pixel_norm)
    report["v_J_refine"] = pixel_loss(stages.J_refine, J, pixel_norm)
    total = sum(report.values())
    report["loss_v"] = total
    return total, report


def total_loss(trace, stages, I, J, weights, t_gt=None, extractor=None, D=None):
    """``loss_u + loss_v`` plus a flat report of every term as Python floats.

    Raises :class:`NonFiniteLoss` naming the first non-finite term.
    """
    lu, ru = loss_u(trace, I, J, weights, extractor, D)
    lv, rv = loss_v(stages, J, t_gt, weights.pixel_norm)
    total = lu + lv
    report = OrderedDict(total=total)
    report.update(ru)
    report.update(rv)
    for name, value in report.items():
        if not torch.isfinite(value):
            raise NonFiniteLoss(name, value.item())
    return total, report
