"""Differentiable elementwise, reduction, shape and small neural-net ops."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_operands(a, b):
    # raw constants adopt the dtype of the tensor operand
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    a, b = as_tensor(a), as_tensor(b)
    return a, b, np.result_type(a.data, b.data)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b, _ = _binary_operands(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward, "add")


def sub(a, b):
    a, b, _ = _binary_operands(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), backward, "sub")


def mul(a, b):
    a, b, _ = _binary_operands(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "mul")


def div(a, b):
    a, b, _ = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def square(a):
    a = as_tensor(a)
    return make_node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sin(a):
    a = as_tensor(a)
    return make_node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    a = as_tensor(a)
    return make_node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def abs(a):
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    return make_node(out, (a,), lambda g: (g * (a.data > 0),), "relu")


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0, a.data).astype(a.dtype, copy=False)
    return make_node(out, (a,), lambda g: (g * expit(a.data),), "softplus")


def maximum(a, floor):
    """Elementwise ``max(a, floor)`` for a constant ``floor``; gradient passes where ``a > floor``."""
    a = as_tensor(a)
    out = np.maximum(a.data, floor)
    return make_node(out, (a,), lambda g: (g * (a.data > floor),), "maximum")


# -- reductions --------------------------------------------------------------

def _check_axis(axis, ndim):
    axes = (axis,) if isinstance(axis, int) else axis
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is not None:
        _check_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    a = as_tensor(a)
    _check_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


def cumsum(a, axis, exclusive=False):
    """Running sum along ``axis``; ``exclusive`` shifts so element ``i`` sums ``[0, i)``."""
    a = as_tensor(a)
    _check_axis(axis, a.ndim)
    out = np.cumsum(a.data, axis=axis)
    if exclusive:
        out = out - a.data

    def backward(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        if exclusive:
            rev = rev - g
        return (rev,)

    return make_node(out, (a,), backward, "cumsum")


# -- shape -------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_node(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None for k in parts)


def index(a, key):
    """``a[key]`` for basic slices or integer-array indexing."""
    a = as_tensor(a)
    out = np.array(a.data[key], copy=True)
    basic = _is_basic(key)

    def backward(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[key] = g
        else:
            np.add.at(ga, key, g)
        return (ga,)

    return make_node(out, (a,), backward, "index")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_node(out, tuple(tensors), backward, "stack")


def broadcast_to(a, shape):
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape).copy()
    return make_node(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_node(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape (..., in) and ``weight`` of shape (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = parents + (bias,)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(grads)

    return make_node(out, parents, backward, "linear")


# -- resampling --------------------------------------------------------------

def _bilinear_matrix(n, dtype):
    """(2n, n) matrix of 2x bilinear upsampling along one axis, half-pixel centers."""
    m = np.zeros((2 * n, n), dtype=dtype)
    src = (np.arange(2 * n) + 0.5) / 2 - 0.5
    src = np.clip(src, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = src - i0
    rows = np.arange(2 * n)
    np.add.at(m, (rows, i0), 1 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def upsample2x(a):
    """Bilinear 2x upsampling of a (C, H, W) tensor (corners not aligned)."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"upsample2x expects (C, H, W), got {a.shape}")
    _, h, w = a.shape
    mh = _bilinear_matrix(h, a.dtype)
    mw = _bilinear_matrix(w, a.dtype)
    out = np.einsum("ih,chw,jw->cij", mh, a.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ih,cij,jw->chw", mh, g, mw, optimize=True),)

    return make_node(out, (a,), backward, "upsample2x")


__all__ = [
    "Tensor", "add", "sub", "mul", "div", "neg", "square", "exp", "log", "sin", "cos", "abs",
    "relu", "sigmoid", "softplus", "maximum", "sum", "mean", "softmax", "cumsum", "reshape",
    "transpose", "index", "concat", "stack", "broadcast_to", "matmul", "linear", "upsample2x",
]
