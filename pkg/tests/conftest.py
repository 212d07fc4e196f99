"""Shared fixtures and the finite-difference gradient oracle.

The oracle perturbs individual weight coordinates of a float64 model and
compares central differences of a scalar loss against the analytic gradient
from the backward pass. It knows nothing about the backward implementation;
it only calls `forward` and the loss function.
"""
from __future__ import annotations

import numpy as np
import pytest

from fedkd import nn

FD_STEP = 1e-4
FD_TOLERANCE = 1e-4


def make_batch(rng: np.random.Generator, arch: nn.ModelArch, size: int = 8) -> nn.InputBatch:
    features = rng.uniform(0.0, 1.0, (size, arch.input_length, arch.input_channels))
    labels = rng.integers(0, arch.num_classes, size)
    return nn.InputBatch(features=features, labels=labels)


def analytic_gradient(model, batch, loss_fn) -> nn.WeightVector:
    logits, cache = nn.forward(model, batch)
    _, logit_grad = loss_fn(logits)
    return nn.backward(model, cache, logit_grad)


def fd_gradient_at(
    model, batch, loss_fn, tensor_index: int, flat_index: int, step: float = FD_STEP
) -> float:
    """Central difference of the scalar loss along one weight coordinate."""
    tensor = model.weights.tensors[tensor_index]
    flat = tensor.reshape(-1)
    original = flat[flat_index]
    flat[flat_index] = original + step
    loss_plus, _ = loss_fn(nn.forward(model, batch)[0])
    flat[flat_index] = original - step
    loss_minus, _ = loss_fn(nn.forward(model, batch)[0])
    flat[flat_index] = original
    return (loss_plus - loss_minus) / (2.0 * step)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a) + abs(b), FD_TOLERANCE)


def check_gradients(
    arch: nn.ModelArch,
    loss_fn_factory,
    seeds,
    coords_per_tensor: int = 3,
    batch_size: int = 8,
) -> float:
    """FD-check `coords_per_tensor` sampled coordinates of every tensor for
    each seed; returns the worst relative error seen. `loss_fn_factory`
    maps (rng, batch) to a scalar loss over logits so soft-label losses can
    derive a teacher from the same seed.

    The loss surface is piecewise smooth: max-pool argmax flips and ReLU
    boundaries put kinks within +-step of a fair fraction of first-layer
    coordinates, where central differences are meaningless. A coordinate is
    screened by comparing the step and step/2 estimates against each other
    (never against the analytic value, so a wrong gradient gains nothing)
    and replaced with another sample when the two disagree."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        model = nn.new_model(arch, rng=rng, dtype=np.float64)
        batch = make_batch(rng, arch, size=batch_size)
        loss_fn = loss_fn_factory(rng, batch)
        grads = analytic_gradient(model, batch, loss_fn)
        for t_idx, grad in enumerate(grads.tensors):
            size = grad.size
            want = min(coords_per_tensor, size)
            checked = 0
            for f_idx in rng.permutation(size):
                if checked == want:
                    break
                numeric = fd_gradient_at(model, batch, loss_fn, t_idx, int(f_idx))
                half = fd_gradient_at(
                    model, batch, loss_fn, t_idx, int(f_idx), step=FD_STEP / 2
                )
                if relative_error(numeric, half) > FD_TOLERANCE / 4:
                    continue  # kink inside the probe interval
                analytic = float(grad.reshape(-1)[f_idx])
                err = relative_error(analytic, numeric)
                worst = max(worst, err)
                assert err < FD_TOLERANCE, (
                    f"seed {seed} tensor {t_idx} coord {f_idx}: "
                    f"analytic {analytic:.3e} vs numeric {numeric:.3e} (err {err:.3e})"
                )
                checked += 1
            assert checked == want, (
                f"seed {seed} tensor {t_idx}: only {checked}/{want} coordinates "
                "were smooth enough to check"
            )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
