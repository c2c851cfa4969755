"""Central-difference verification of autograd gradients."""

import torch

MAX_INPUTS = 10_000


def numerical_gradient(fn, inputs, eps=1e-4):
    grads = []
    for x in inputs:
        g = torch.zeros_like(x)
        flat, gflat = x.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(*inputs).detach())
            flat[i] = orig - eps
            lo = float(fn(*inputs).detach())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def analytic_gradient(fn, inputs):
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    return [torch.zeros_like(x) if g is None else g for x, g in zip(leaves, grads)]


def grad_check(fn, point, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the tensor(s) in ``point`` to a scalar. Relative error per
    coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``. Run in float64.
    """
    inputs = [point] if torch.is_tensor(point) else list(point)
    inputs = [x.detach().clone() for x in inputs]
    n = sum(x.numel() for x in inputs)
    if n > MAX_INPUTS:
        raise ValueError(f"{n} inputs exceeds the {MAX_INPUTS} limit for central differences")
    with torch.no_grad():
        numeric = numerical_gradient(fn, inputs, eps)
    analytic = analytic_gradient(fn, inputs)
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = torch.maximum(torch.maximum(a.abs(), b.abs()), torch.full_like(a, 1e-8))
        worst = max(worst, float(((a - b).abs() / denom).max()))
    return worst
