"""Parameter containers: a minimal module tree with deterministic naming."""

from __future__ import annotations

import numpy as np

from . import conv as _conv
from . import ops
from .tensor import Tensor, get_default_dtype


class Module:
    """Base class; parameters are the ``requires_grad`` tensors found on attributes.

    Traversal follows attribute assignment order, so names are stable across runs.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in own.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        """Cast every parameter in place (used to switch to 64-bit for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def _uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, gain=np.sqrt(2.0)):
        self.weight = _uniform(rng, (out_features, in_features), in_features, gain)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv(Module):
    """N-d convolution layer (``nd`` in {2, 3}), optionally transposed."""

    def __init__(self, nd, c_in, c_out, k, rng, stride=1, padding=0, transpose=False,
                 gain=np.sqrt(2.0)):
        self.nd = nd
        self.stride = stride
        self.padding = padding
        self.transpose = transpose
        fan_in = c_in * k**nd
        if transpose:
            # each output sees c_in * (k / stride)^nd inputs
            fan_in = c_in * max(1, (k // stride)) ** nd
            shape = (c_in, c_out) + (k,) * nd
        else:
            shape = (c_out, c_in) + (k,) * nd
        self.weight = _uniform(rng, shape, fan_in, gain)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x):
        if self.transpose:
            fn = _conv.conv_transpose2d if self.nd == 2 else _conv.conv_transpose3d
        else:
            fn = _conv.conv2d if self.nd == 2 else _conv.conv3d
        return fn(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def parameter(values):
    return Tensor(np.asarray(values, dtype=get_default_dtype()), requires_grad=True)
