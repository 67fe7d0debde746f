"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    a = np.ravel(analytic).astype(np.float64)
    n = np.ravel(numeric).astype(np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numerical_gradient(loss_fn, tensor, eps=1e-4, indices=None):
    """Central differences of scalar ``loss_fn()`` w.r.t. entries of ``tensor.data``.

    ``indices`` restricts the probe to a subset of flat positions.
    """
    flat = tensor.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    out = np.zeros(len(positions))
    with no_grad():
        for j, i in enumerate(positions):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            out[j] = (up - down) / (2 * eps)
    return out


def check_gradients(fn, inputs, rng, eps=1e-4, max_probes=None):
    """Compare backward() against central differences for ``fn(*inputs)``.

    The (possibly non-scalar) output is contracted with a fixed random tensor so
    every output element participates. Returns ``{input_index: relative_error}``
    for each input that requires grad.
    """
    for t in inputs:
        t.grad = None
    probe = fn(*inputs)
    weights = Tensor(rng.standard_normal(probe.shape), dtype=probe.dtype)

    def loss():
        return (fn(*inputs) * weights).sum()

    loss().backward()
    errors = {}
    for i, t in enumerate(inputs):
        if not isinstance(t, Tensor) or not t.requires_grad:
            continue
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1)
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = np.sort(rng.choice(t.size, size=max_probes, replace=False))
            analytic = analytic[idx]
        numeric = numerical_gradient(loss, t, eps=eps, indices=idx)
        errors[i] = relative_error(analytic, numeric)
    return errors
