"""Shared test utilities: tiny configs and finite-difference oracles."""

import numpy as np
import torch

from layerseg.config import FullConfig, TrainConfig
from layerseg.model import ModelConfig


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        crop_h=16,
        crop_w=32,
        eta=4,
        feat_dim=8,
        num_slots=2,
        binding_steps=2,
        enc_channels=(4, 8, 8),
        mask_hidden=4,
        layer_hidden=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_full_config(**train_overrides) -> FullConfig:
    train = dict(
        base_lr=5e-4,
        warmup_steps=10,
        total_steps=20,
        batch_size=4,
        seed=0,
        checkpoint_interval=10,
    )
    train.update(train_overrides)
    return FullConfig(model=tiny_model_config(), train=TrainConfig(**train))


def fd_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (float64)."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def autograd_grad(f, x: np.ndarray) -> np.ndarray:
    """Autograd gradient of scalar torch function f at numpy point x."""
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    out = f(t)
    out.backward()
    return t.grad.numpy()


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradient(torch_fn, shape, rng, eps=1e-5, tol=1e-4) -> float:
    """Compare autograd and central-FD gradients of a scalar function.

    ``torch_fn`` maps a float64 tensor of ``shape`` to a scalar tensor.
    Returns the relative error (and asserts it under ``tol``).
    """
    x = rng.standard_normal(shape)
    ag = autograd_grad(torch_fn, x)

    def f_np(arr):
        with torch.no_grad():
            return float(torch_fn(torch.tensor(arr, dtype=torch.float64)))

    fd = fd_grad(f_np, x, eps)
    err = rel_err(ag, fd)
    assert err <= tol, f"gradient mismatch: rel err {err:.2e}"
    return err
