"""Atmospheric scattering model and its residual reformulation.

Tensors follow the torch layout: images are ``(..., 3, H, W)``, transmission
maps ``(..., 1, H, W)``. Atmospheric light may be given as a ``(3,)`` triple,
a ``(B, 3)`` batch of triples, or anything already broadcastable to the image
(e.g. ``(B, 3, 1, 1)``).
"""

import torch

T_MIN = 0.05
EPS_A = 1e-2


class NonFiniteInput(ValueError):
    def __init__(self, name):
        super().__init__(f"{name} contains non-finite values")
        self.name = name


def _check_finite(**tensors):
    for name, x in tensors.items():
        if not torch.isfinite(x).all():
            raise NonFiniteInput(name)


def _check_image(name, x):
    if x.dim() < 3 or x.shape[-3] != 3:
        raise ValueError(f"{name} must have shape (..., 3, H, W), got {tuple(x.shape)}")


def _check_same(a_name, a, b_name, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a_name} {tuple(a.shape)} vs {b_name} {tuple(b.shape)}")


def _check_transmission(t, image):
    if t.dim() != image.dim() or t.shape[-3] != 1 or t.shape[-2:] != image.shape[-2:] \
            or t.shape[:-3] != image.shape[:-3]:
        raise ValueError(
            f"transmission shape {tuple(t.shape)} does not match image {tuple(image.shape)}")


def as_light(A, image):
    """Reshape atmospheric light so it broadcasts against ``image``."""
    A = torch.as_tensor(A, dtype=image.dtype, device=image.device)
    if A.dim() == 1:
        if A.shape[0] != 3:
            raise ValueError(f"atmospheric light must have 3 channels, got {tuple(A.shape)}")
        return A.view(3, 1, 1)
    if A.dim() == 2:
        if A.shape[1] != 3:
            raise ValueError(f"atmospheric light must have 3 channels, got {tuple(A.shape)}")
        return A.view(A.shape[0], 3, 1, 1)
    return A


def synthesize_haze(J, t, A):
    """Hazy image ``J*t + A*(1-t)``, clamped to [0, 1]."""
    _check_image("J", J)
    _check_transmission(t, J)
    A = as_light(A, J)
    _check_finite(J=J, t=t, A=A)
    return (J * t + A * (1 - t)).clamp(0.0, 1.0)


def invert_scattering(I, t, A, t_min=T_MIN):
    """Recover the scene radiance ``(I - A*(1-t)) / t``, clamped to [0, 1].

    ``t`` must already respect the floor ``t_min``; it is not clamped here.
    """
    _check_image("I", I)
    _check_transmission(t, I)
    A = as_light(A, I)
    _check_finite(I=I, t=t, A=A)
    if (t < t_min).any():
        raise ValueError(f"transmission below t_min={t_min}; clamp before inverting")
    return ((I - A * (1 - t)) / t).clamp(0.0, 1.0)


def residual_of(I, J):
    """Residual ``J - I`` between the haze-free image and the hazy input."""
    _check_same("I", I, "J", J)
    return J - I


def transmission_from_residual(R, J, A, t_min=T_MIN, eps_A=EPS_A):
    """Transmission ``1 - R / (J - A)`` averaged over channels.

    The denominator magnitude is floored at ``eps_A`` (sign kept, zero counts
    as positive) and the result is clamped to ``[t_min, 1]``.
    """
    _check_image("R", R)
    _check_same("R", R, "J", J)
    A = as_light(A, J)
    _check_finite(R=R, J=J, A=A)
    denom = J - A
    denom = torch.where(denom >= 0, denom.clamp(min=eps_A), denom.clamp(max=-eps_A))
    t = (1 - R / denom).mean(dim=-3, keepdim=True)
    return t.clamp(t_min, 1.0)


def transmission_from_depth(depth, beta, t_min=T_MIN):
    """Beer-Lambert transmission ``exp(-beta * depth)`` clamped to ``[t_min, 1]``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    depth = torch.as_tensor(depth)
    _check_finite(depth=depth)
    if (depth < 0).any():
        raise ValueError("depth must be nonnegative")
    return torch.exp(-beta * depth).clamp(t_min, 1.0)
