"""Recurrent physical-model-free dehazing component.

A single encoder-decoder ``G`` with a convolutional LSTM at its bottleneck is
applied ``K`` times. Each pass consumes the hazy image together with the
previous residual estimate; a small convolutional stack ``f_R`` then maps the
deviation ``I - J_k`` to the next residual estimate.
"""

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

DOWNSAMPLE = 4


@dataclass
class RecurrentState:
    hidden: torch.Tensor
    cell: torch.Tensor


def init_residual(shape, dtype=torch.float32, device=None):
    """All-zero residual map. ``shape`` is ``(H, W)`` or ``(B, H, W)``."""
    shape = tuple(shape)
    if len(shape) not in (2, 3):
        raise ValueError(f"expected (H, W) or (B, H, W), got {shape}")
    return torch.zeros(*shape[:-2], 3, *shape[-2:], dtype=dtype, device=device)


def _conv(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.PReLU(cout))


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels, hidden_channels):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels, 3, 1, 1)

    def forward(self, x, state):
        i, f, o, g = self.gates(torch.cat([x, state.hidden], dim=1)).chunk(4, dim=1)
        cell = torch.sigmoid(f) * state.cell + torch.sigmoid(i) * torch.tanh(g)
        hidden = torch.sigmoid(o) * torch.tanh(cell)
        return hidden, RecurrentState(hidden, cell)


class DehazeGenerator(nn.Module):
    """Three-level encoder-decoder with skip connections and an LSTM bottleneck."""

    def __init__(self, widths=(16, 32, 64)):
        super().__init__()
        c1, c2, c3 = widths
        self.widths = tuple(widths)
        self.enc1 = nn.Sequential(_conv(6, c1), _conv(c1, c1))
        self.enc2 = nn.Sequential(_conv(c1, c2, stride=2), _conv(c2, c2))
        self.enc3 = nn.Sequential(_conv(c2, c3, stride=2), _conv(c3, c3))
        self.lstm = ConvLSTMCell(c3, c3)
        self.up2 = nn.Sequential(nn.ConvTranspose2d(c3, c2, 4, 2, 1), nn.PReLU(c2))
        self.dec2 = _conv(2 * c2, c2)
        self.up1 = nn.Sequential(nn.ConvTranspose2d(c2, c1, 4, 2, 1), nn.PReLU(c1))
        self.dec1 = _conv(2 * c1, c1)
        self.out = nn.Conv2d(c1, 3, 3, 1, 1)

    def init_state(self, batch, height, width, dtype=torch.float32, device=None):
        c = self.widths[2]
        shape = (batch, c, height // DOWNSAMPLE, width // DOWNSAMPLE)
        return RecurrentState(torch.zeros(shape, dtype=dtype, device=device),
                              torch.zeros(shape, dtype=dtype, device=device))

    def forward(self, I, R_prev, state):
        e1 = self.enc1(torch.cat([I, R_prev], dim=1))
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        h, state = self.lstm(e3, state)
        d2 = self.dec2(torch.cat([self.up2(h), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return torch.sigmoid(self.out(d1)), state


class ResidualFunction(nn.Module):
    """``f_R``: four 3x3 conv layers mapping ``I - J_k`` to a residual in [-1, 1]."""

    def __init__(self, width=16, layers=4):
        super().__init__()
        body = [_conv(3, width)]
        body += [_conv(width, width) for _ in range(layers - 2)]
        body.append(nn.Conv2d(width, 3, 3, 1, 1))
        self.body = nn.Sequential(*body)

    def forward(self, deviation):
        return torch.tanh(self.body(deviation))


class ModelFreeDehazer(nn.Module):
    def __init__(self, widths=(16, 32, 64), residual_width=16):
        super().__init__()
        self.G = DehazeGenerator(widths)
        self.f_R = ResidualFunction(residual_width)

    def init_state(self, I):
        b, _, h, w = I.shape
        return self.G.init_state(b, h, w, dtype=I.dtype, device=I.device)

    def step(self, I, R_prev, state):
        """One refinement pass; returns ``(J_k, R_k, state')``."""
        if R_prev.shape != I.shape:
            raise ValueError(f"shape mismatch: I {tuple(I.shape)} vs R_prev {tuple(R_prev.shape)}")
        h, w = I.shape[-2:]
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValueError(f"spatial dims must be multiples of {DOWNSAMPLE}, got {h}x{w}")
        expected = (I.shape[0], self.G.widths[2], h // DOWNSAMPLE, w // DOWNSAMPLE)
        if tuple(state.hidden.shape) != expected or tuple(state.cell.shape) != expected:
            raise ValueError(f"recurrent state must be {expected}, got {tuple(state.hidden.shape)}")
        J_k, state = self.G(I, R_prev, state)
        R_k = self.f_R(I - J_k)
        return J_k, R_k, state

    def forward(self, I, K=3):
        """Run ``K`` passes from a zero residual; returns the list of ``(J_k, R_k)``."""
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        R = init_residual((I.shape[0], *I.shape[-2:]), dtype=I.dtype, device=I.device)
        state = self.init_state(I)
        trace = []
        for _ in range(K):
            J_k, R, state = self.step(I, R, state)
            trace.append((J_k, R))
        return trace

    run = forward
