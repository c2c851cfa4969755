"""Scattering-model stage: atmospheric light, transmission from residuals,
transmission refinement, and restoration by model inversion."""

import math
from dataclasses import dataclass

import torch
from torch import nn

from prdehaze.physics import T_MIN, EPS_A, invert_scattering, transmission_from_residual


@dataclass
class StageOutputs:
    A_hat: torch.Tensor      # (B, 3)
    t_hat: torch.Tensor      # (B, 1, H, W)
    t_refine: torch.Tensor
    J_prelim: torch.Tensor   # (B, 3, H, W)
    J_refine: torch.Tensor


def _conv(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.PReLU(cout))


LIGHT_FLOOR = 0.6


class AtmosphericLightNet(nn.Module):
    """Small U-Net whose dense output is pooled to one light triple.

    The pooled logits pass through a sigmoid rescaled to ``[floor, 1]``. With
    a floor of 0 the map is a plain sigmoid; a positive floor keeps the
    estimate out of the dark basin where the inversion loss also decreases.
    """

    def __init__(self, width=16, init_light=0.85, floor=LIGHT_FLOOR):
        super().__init__()
        if not 0 <= floor < init_light < 1:
            raise ValueError(f"need 0 <= floor < init_light < 1, got {floor}, {init_light}")
        self.floor = floor
        self.enc1 = _conv(3, width)
        self.enc2 = nn.Sequential(_conv(width, 2 * width, stride=2), _conv(2 * width, 2 * width))
        self.up = nn.Sequential(nn.ConvTranspose2d(2 * width, width, 4, 2, 1), nn.PReLU(width))
        self.dec = _conv(2 * width, width)
        self.out = nn.Conv2d(width, 3, 1)
        p = (init_light - floor) / (1 - floor)
        nn.init.constant_(self.out.bias, math.log(p / (1 - p)))

    def forward(self, I):
        e1 = self.enc1(I)
        d = self.dec(torch.cat([self.up(self.enc2(e1)), e1], dim=1))
        return self.floor + (1 - self.floor) * torch.sigmoid(self.out(d).mean(dim=(-2, -1)))


class ResBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(width, width, 3, 1, 1), nn.PReLU(width),
                                  nn.Conv2d(width, width, 3, 1, 1))

    def forward(self, x):
        return x + self.body(x)


class TransmissionRefiner(nn.Module):
    """Predicts an additive correction to ``t_hat`` from ``concat(t_hat, I)``."""

    def __init__(self, width=32, blocks=4):
        super().__init__()
        self.head = _conv(4, width)
        self.blocks = nn.Sequential(*[ResBlock(width) for _ in range(blocks)])
        self.tail = nn.Conv2d(width, 1, 3, 1, 1)
        # start as the identity so training begins from the residual-derived estimate
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, t_hat, I):
        return self.tail(self.blocks(self.head(torch.cat([t_hat, I], dim=1))))


class PhysicsDehazer(nn.Module):
    def __init__(self, light_width=16, refine_width=32, refine_blocks=4,
                 t_min=T_MIN, eps_A=EPS_A, light_floor=LIGHT_FLOOR):
        super().__init__()
        self.light = AtmosphericLightNet(light_width, floor=light_floor)
        self.refiner = TransmissionRefiner(refine_width, refine_blocks)
        self.t_min = t_min
        self.eps_A = eps_A

    def estimate_atmospheric_light(self, I):
        return self.light(I)

    def forward(self, I, J_hat, R_hat):
        if not (I.shape == J_hat.shape == R_hat.shape):
            raise ValueError(f"shape mismatch: I {tuple(I.shape)}, J_hat {tuple(J_hat.shape)}, "
                             f"R_hat {tuple(R_hat.shape)}")
        A_hat = self.estimate_atmospheric_light(I)
        t_hat = transmission_from_residual(R_hat, J_hat, A_hat, self.t_min, self.eps_A)
        t_refine = (t_hat + self.refiner(t_hat, I)).clamp(self.t_min, 1.0)
        return StageOutputs(
            A_hat=A_hat,
            t_hat=t_hat,
            t_refine=t_refine,
            J_prelim=invert_scattering(I, t_hat, A_hat, self.t_min),
            J_refine=invert_scattering(I, t_refine, A_hat, self.t_min),
        )
