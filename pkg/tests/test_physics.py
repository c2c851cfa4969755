import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from points import haze_point, residual_point
from prdehaze.gradcheck import grad_check
from prdehaze.physics import (EPS_A, T_MIN, invert_scattering, residual_of, synthesize_haze,
                              transmission_from_depth, transmission_from_residual)

D = torch.float64


def const(value, channels=3, size=4):
    return torch.full((channels, size, size), value, dtype=D)


def test_synthesize_identity_when_clear():
    J = torch.rand(3, 5, 6, dtype=D)
    assert torch.equal(synthesize_haze(J, torch.ones(1, 5, 6, dtype=D), [0.8, 0.9, 1.0]), J)


def test_synthesize_full_haze_limit():
    J = torch.rand(3, 5, 5, dtype=D)
    A = torch.tensor([0.7, 0.8, 0.9], dtype=D)
    for t in (1e-2, 1e-4, 1e-8):
        I = synthesize_haze(J, torch.full((1, 5, 5), t, dtype=D), A)
        assert (I - A.view(3, 1, 1)).abs().max() <= t


def test_synthesize_hand_value():
    I = synthesize_haze(const(0.2), const(0.5, 1), [1.0, 1.0, 1.0])
    assert torch.allclose(I, const(0.6), atol=1e-15)


def test_invert_hand_value_and_identity():
    J = invert_scattering(const(0.6), const(0.5, 1), [1.0, 1.0, 1.0])
    assert torch.allclose(J, const(0.2), atol=1e-15)
    I = torch.rand(3, 4, 4, dtype=D)
    assert torch.equal(invert_scattering(I, const(1.0, 1), [0.5, 0.5, 0.5]), I)


def test_invert_rejects_low_transmission():
    with pytest.raises(ValueError, match="t_min"):
        invert_scattering(const(0.5), const(T_MIN / 2, 1), [1.0, 1.0, 1.0])


@pytest.mark.parametrize("bad", [
    lambda J, t: synthesize_haze(J, t[..., :3], [1, 1, 1]),
    lambda J, t: synthesize_haze(J[:2], t, [1, 1, 1]),
    lambda J, t: residual_of(J, J[..., :3]),
    lambda J, t: invert_scattering(J, t, [1, 1]),
])
def test_shape_mismatch_rejected(bad):
    with pytest.raises(ValueError):
        bad(const(0.5), const(0.5, 1))


def test_non_finite_rejected():
    J = const(0.5)
    J[0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        synthesize_haze(J, const(0.5, 1), [1, 1, 1])
    with pytest.raises(ValueError, match="non-finite"):
        transmission_from_residual(J, const(0.5), [1, 1, 1])


def test_residual_examples():
    J = torch.rand(3, 4, 4, dtype=D)
    assert residual_of(J, J).abs().sum() == 0
    assert torch.allclose(residual_of(const(0.6), const(0.2)), const(-0.4), atol=1e-15)


def test_transmission_from_residual_examples():
    assert torch.equal(transmission_from_residual(const(0.0), const(0.2), [0.9] * 3), const(1.0, 1))
    t = transmission_from_residual(const(-0.4), const(0.2), [1.0, 1.0, 1.0])
    assert torch.allclose(t, const(0.5, 1), atol=1e-15)


def test_transmission_guard_keeps_sign_and_range():
    J = const(0.9)
    A = [0.9, 0.9, 0.9]        # J - A == 0 -> denominator treated as +EPS_A
    t = transmission_from_residual(const(-0.001), J, A)
    assert torch.allclose(t, const(1.0, 1))
    t = transmission_from_residual(const(0.001), J, A)
    assert torch.allclose(t, const(1 - 0.001 / EPS_A, 1))
    t = transmission_from_residual(torch.rand(3, 4, 4, dtype=D) * 2 - 1, torch.rand(3, 4, 4, dtype=D), A)
    assert t.min() >= T_MIN and t.max() <= 1


def test_transmission_from_depth():
    assert torch.equal(transmission_from_depth(torch.zeros(1, 3, 3, dtype=D), 0.7), torch.ones(1, 3, 3, dtype=D))
    t = transmission_from_depth(torch.full((1, 2, 2), math.log(2), dtype=D), 1.0)
    assert torch.allclose(t, torch.full((1, 2, 2), 0.5, dtype=D), atol=1e-15)
    with pytest.raises(ValueError):
        transmission_from_depth(torch.zeros(1, 2, 2), 0.0)
    with pytest.raises(ValueError):
        transmission_from_depth(-torch.ones(1, 2, 2), 1.0)


@given(st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 5))
def test_transmission_monotone_in_depth(d1, d2, beta):
    lo, hi = sorted((d1, d2))
    t = transmission_from_depth(torch.tensor([lo, hi], dtype=D), beta)
    assert t[1] <= t[0]


def random_scene(gen, shape=(3, 8, 8), t_lo=0.1):
    J = torch.rand(shape, generator=gen, dtype=D)
    t = t_lo + (1 - t_lo) * torch.rand((1, *shape[1:]), generator=gen, dtype=D)
    A = torch.rand(3, generator=gen, dtype=D)
    return J, t, A


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_round_trip(seed):
    gen = torch.Generator().manual_seed(seed)
    J, t, A = random_scene(gen)
    raw = J * t + A.view(3, 1, 1) * (1 - t)
    assert raw.min() >= 0 and raw.max() <= 1   # convex combination, so the clamp is inactive
    assert (invert_scattering(synthesize_haze(J, t, A), t, A) - J).abs().max() < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_residual_identity_recovers_transmission(seed):
    gen = torch.Generator().manual_seed(seed)
    J, t, A = random_scene(gen, t_lo=0.15)
    t = t.clamp(max=0.95)
    I = synthesize_haze(J, t, A)
    recovered = transmission_from_residual(residual_of(I, J), J, A)
    # each channel quotient equals t exactly where |J - A| >= 0.1 in all channels
    safe = ((J - A.view(3, 1, 1)).abs() >= 0.1).all(dim=0, keepdim=True)
    assert ((recovered - t).abs()[safe] < 1e-5).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_haze_brightens_when_light_dominates(seed):
    gen = torch.Generator().manual_seed(seed)
    J, t, _ = random_scene(gen)
    A = J.amax(dim=(1, 2)) + (1 - J.amax(dim=(1, 2))) * torch.rand(3, generator=gen, dtype=D)
    assert (synthesize_haze(J, t, A) >= J - 1e-15).all()


def test_gradients_match_finite_differences(rng):
    for _ in range(10):
        J, t, A = haze_point(rng)
        w = torch.rand(3, 4, 4, generator=rng, dtype=D)
        assert grad_check(lambda j, tt, a: (w * synthesize_haze(j, tt, a)).sum(), (J, t, A)) < 1e-3
        R, J, A = residual_point(rng)
        wt = torch.rand(1, 4, 4, generator=rng, dtype=D)
        assert grad_check(lambda r, j, a: (wt * transmission_from_residual(r, j, a)).sum(),
                          (R, J, A)) < 1e-3
