import pytest
import torch

from prdehaze.model import ModelConfig, count_parameters, has_batch_norm
from prdehaze.model_free import ModelFreeDehazer, RecurrentState, init_residual


@pytest.fixture
def dehazer():
    torch.manual_seed(0)
    return ModelFreeDehazer().eval()


@pytest.fixture
def image():
    return torch.rand(2, 3, 16, 24, generator=torch.Generator().manual_seed(5))


def test_init_residual_is_zero():
    R = init_residual((64, 64))
    assert R.shape == (3, 64, 64)
    assert R.abs().sum() == 0
    assert init_residual((2, 8, 4)).shape == (2, 3, 8, 4)


def test_zero_residual_matches_explicit_zeros(dehazer, image):
    state = dehazer.init_state(image)
    a = dehazer.step(image, init_residual((2, 16, 24)), state)
    b = dehazer.step(image, torch.zeros_like(image), state)
    for x, y in zip(a[:2], b[:2]):
        assert torch.equal(x, y)


def test_state_starts_at_zero_with_bottleneck_dims(dehazer, image):
    state = dehazer.init_state(image)
    assert state.hidden.shape == (2, 64, 4, 6)
    assert state.hidden.abs().sum() == 0 and state.cell.abs().sum() == 0


def test_step_shapes_ranges_and_determinism(dehazer, image):
    R0 = init_residual((2, 16, 24))
    J1, R1, s1 = dehazer.step(image, R0, dehazer.init_state(image))
    J2, R2, s2 = dehazer.step(image, R0, dehazer.init_state(image))
    assert J1.shape == R1.shape == image.shape
    assert s1.hidden.shape == s2.hidden.shape == (2, 64, 4, 6)
    assert torch.equal(J1, J2) and torch.equal(R1, R2) and torch.equal(s1.cell, s2.cell)
    assert J1.min() >= 0 and J1.max() <= 1
    assert R1.min() >= -1 and R1.max() <= 1


def test_step_rejects_mismatch(dehazer, image):
    state = dehazer.init_state(image)
    with pytest.raises(ValueError):
        dehazer.step(image, torch.zeros(2, 3, 16, 20), state)
    with pytest.raises(ValueError):
        dehazer.step(image, torch.zeros_like(image), RecurrentState(torch.zeros(1), torch.zeros(1)))


def test_run_lengths_and_prefix(dehazer, image):
    with pytest.raises(ValueError):
        dehazer(image, K=0)
    assert len(dehazer(image, K=1)) == 1
    short, long = dehazer(image, K=3), dehazer(image, K=4)
    assert len(short) == 3 and len(long) == 4
    for (Ja, Ra), (Jb, Rb) in zip(short, long):
        assert torch.equal(Ja, Jb) and torch.equal(Ra, Rb)


def test_default_iteration_count():
    assert ModelConfig().K == 3
    assert ModelConfig().build().K == 3


def test_no_normalization_layers():
    model = ModelConfig().build()
    assert not has_batch_norm(model)
    assert count_parameters(model) > 0
    assert not has_batch_norm(model.free.G) and not has_batch_norm(model.free.f_R)
    assert has_batch_norm(torch.nn.Sequential(torch.nn.BatchNorm2d(3)))


def test_every_parameter_receives_gradient(image):
    torch.manual_seed(1)
    model = ModelConfig().build()
    J = torch.rand_like(image)
    trace, stages = model(image)
    loss = sum((Jk - J).abs().mean() + (Rk - (J - image)).abs().mean() for Jk, Rk in trace)
    loss.backward()
    for name, p in model.free.named_parameters():
        assert p.grad is not None and p.grad.norm() > 0, name
