"""The full cascade: model-free iterations followed by the scattering stage."""

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from prdehaze.model_free import DOWNSAMPLE, ModelFreeDehazer
from prdehaze.physics import EPS_A, T_MIN
from prdehaze.physics_dehazer import LIGHT_FLOOR, PhysicsDehazer, StageOutputs


class ProgressiveDehazer(nn.Module):
    def __init__(self, K=3, widths=(16, 32, 64), residual_width=16, light_width=16,
                 refine_width=32, refine_blocks=4, t_min=T_MIN, eps_A=EPS_A,
                 stage_gradient=False, light_floor=LIGHT_FLOOR):
        super().__init__()
        self.K = K
        self.stage_gradient = stage_gradient
        self.free = ModelFreeDehazer(widths, residual_width)
        self.physics = PhysicsDehazer(light_width, refine_width, refine_blocks, t_min, eps_A,
                                      light_floor)

    def forward(self, I, K=None):
        trace = self.free(I, K or self.K)
        J_K, R_K = trace[-1]
        if not self.stage_gradient:
            # the 1/(J - A) and 1/t factors of the scattering stage swamp the
            # model-free losses if its gradients reach J_K and R_K
            J_K, R_K = J_K.detach(), R_K.detach()
        return trace, self.physics(I, J_K, R_K)

    @torch.no_grad()
    def dehaze(self, I, K=None):
        """Inference on arbitrary sizes: reflect-pads to the encoder stride and crops back."""
        h, w = I.shape[-2:]
        ph, pw = -h % DOWNSAMPLE, -w % DOWNSAMPLE
        mode = "reflect" if min(h, w) > max(ph, pw) else "replicate"
        x = F.pad(I, (0, pw, 0, ph), mode=mode) if ph or pw else I
        trace, stages = self(x, K)
        crop = lambda y: y[..., :h, :w]
        trace = [(crop(J), crop(R)) for J, R in trace]
        stages = StageOutputs(stages.A_hat, crop(stages.t_hat), crop(stages.t_refine),
                              crop(stages.J_prelim), crop(stages.J_refine))
        return trace, stages


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def has_batch_norm(module):
    norm_types = (nn.modules.batchnorm._BatchNorm, nn.GroupNorm, nn.LayerNorm,
                  nn.modules.instancenorm._InstanceNorm)
    return any(isinstance(m, norm_types) for m in module.modules())


@dataclass
class ModelConfig:
    K: int = 3
    widths: tuple = (16, 32, 64)
    residual_width: int = 16
    light_width: int = 16
    refine_width: int = 32
    refine_blocks: int = 4
    t_min: float = T_MIN
    eps_A: float = EPS_A
    stage_gradient: bool = False
    light_floor: float = LIGHT_FLOOR

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if len(self.widths) != 3:
            raise ValueError(f"widths must have 3 entries, got {self.widths}")
        if not 0 < self.t_min < 1:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")
        if not 0 <= self.light_floor < 0.85:
            raise ValueError(f"light_floor must lie in [0, 0.85), got {self.light_floor}")

    def build(self):
        return ProgressiveDehazer(self.K, self.widths, self.residual_width, self.light_width,
                                  self.refine_width, self.refine_blocks, self.t_min, self.eps_A,
                                  self.stage_gradient, self.light_floor)
