import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def finite_difference(fn, tensor, index, eps):
    """Central finite difference of a scalar-valued fn at one coordinate.

    Only the coordinate mutation runs under no_grad; fn itself may need an
    autograd graph internally (e.g. the gradient penalty).
    """
    with torch.no_grad():
        orig = tensor.flatten()[index].item()
        tensor.flatten()[index] = orig + eps
    f_plus = float(fn().detach())
    with torch.no_grad():
        tensor.flatten()[index] = orig - eps
    f_minus = float(fn().detach())
    with torch.no_grad():
        tensor.flatten()[index] = orig
    return (f_plus - f_minus) / (2 * eps)


def check_gradients(fn, tensor, n_coords=20, eps=1e-6, rtol=1e-5, seed=0):
    """Compare autograd against central differences on random coordinates.

    ``fn`` recomputes the scalar loss from current tensor values. Returns the
    max relative error seen; asserts it stays below ``rtol``.
    """
    tensor.requires_grad_(True)
    loss = fn()
    (grad,) = torch.autograd.grad(loss, tensor)
    tensor.requires_grad_(False)
    rng = np.random.default_rng(seed)
    coords = rng.choice(tensor.numel(), size=min(n_coords, tensor.numel()), replace=False)
    worst = 0.0
    for index in coords:
        analytic = grad.flatten()[index].item()
        numeric = finite_difference(fn, tensor, index, eps)
        scale = max(abs(analytic), abs(numeric), 1e-4)
        worst = max(worst, abs(analytic - numeric) / scale)
    assert worst < rtol, f"worst relative gradient error {worst:.3g} >= {rtol}"
    return worst
