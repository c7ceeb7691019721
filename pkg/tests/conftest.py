import os

import numpy as np
import pytest
import torch

torch.set_num_threads(min(2, os.cpu_count() or 1))


def fd_grads_params(loss_fn, params, step=1e-4):
    """Central finite-difference gradients of loss_fn() with respect to each
    element of each tensor in `params` (in place perturbation, 64-bit)."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = float(loss_fn())
                flat[i] = orig - step
                lo = float(loss_fn())
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * step)
            grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, f in zip(analytic, numeric):
        a = a.detach()
        denom = torch.maximum(torch.maximum(a.abs(), f.abs()),
                              torch.full_like(a, 1e-6))
        worst = max(worst, float(((a - f).abs() / denom).max()))
    return worst


def check_gradients(model, loss_fn, step=1e-4, tol=1e-4):
    """Autograd vs central differences over all model parameters."""
    params = [p for p in model.parameters() if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.clone() if p.grad is not None else torch.zeros_like(p)
                for p in params]
    numeric = fd_grads_params(lambda: loss_fn().detach(), params, step=step)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"max relative gradient error {err:.3e} >= {tol}"
    return err


@pytest.fixture
def tiny_vec_config():
    from mavenlab.networks import NetworkConfig
    return NetworkConfig(latent_dim=3, image_shape=(1, 1, 2), n_classes=3,
                         channels=(8, 8), dropout_rate=0.0, use_batchnorm=False)


def param_count(model):
    return sum(p.numel() for p in model.parameters())


def seed_all(seed=0):
    torch.manual_seed(seed)
    np.random.seed(seed)
