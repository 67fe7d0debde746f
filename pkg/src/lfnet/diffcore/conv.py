"""2D/3D convolution and transposed convolution via im2col.

Weights follow the usual layouts: ``(C_out, C_in, k, ...)`` for convolutions
and ``(C_in, C_out, k, ...)`` for transposed convolutions. Inputs carry no
batch axis.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import ShapeError, as_tensor, make_node


def _window_slices(offset, stride, out_shape):
    return (slice(None),) + tuple(
        slice(o, o + stride * (m - 1) + 1, stride) for o, m in zip(offset, out_shape)
    )


def _im2col(xp, k, stride, out_shape):
    nd = len(out_shape)
    c = xp.shape[0]
    cols = np.empty((c, k**nd) + tuple(out_shape), dtype=xp.dtype)
    for n, off in enumerate(itertools.product(range(k), repeat=nd)):
        cols[:, n] = xp[_window_slices(off, stride, out_shape)]
    return cols.reshape(c * k**nd, -1)


def _col2im(cols, channels, k, stride, out_shape, padded_shape):
    nd = len(out_shape)
    cols = cols.reshape((channels, k**nd) + tuple(out_shape))
    xp = np.zeros((channels,) + tuple(padded_shape), dtype=cols.dtype)
    for n, off in enumerate(itertools.product(range(k), repeat=nd)):
        xp[_window_slices(off, stride, out_shape)] += cols[:, n]
    return xp


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, [(0, 0)] + [(padding, padding)] * (x.ndim - 1))


def _crop(x, padding):
    if padding == 0:
        return x
    return x[(slice(None),) + (slice(padding, -padding),) * (x.ndim - 1)]


def _check(name, x, w, nd, in_axis):
    if x.ndim != nd + 1:
        raise ShapeError(f"{name}: input must be (C, {'D, ' if nd == 3 else ''}H, W), got {x.shape}")
    if w.ndim != nd + 2 or len(set(w.shape[2:])) != 1:
        raise ShapeError(f"{name}: kernel must be cubic with {nd} spatial axes, got {w.shape}")
    if w.shape[in_axis] != x.shape[0]:
        raise ShapeError(f"{name}: input {x.shape} does not match kernel {w.shape}")


def _conv(name, nd, x, weight, bias, stride, padding):
    x, weight = as_tensor(x), as_tensor(weight)
    _check(name, x, weight, nd, in_axis=1)
    k = weight.shape[2]
    c_out = weight.shape[0]
    xp = _pad(x.data, padding)
    if any(s < k for s in xp.shape[1:]):
        raise ShapeError(f"{name}: padded input {xp.shape} smaller than kernel {weight.shape}")
    out_shape = tuple((s - k) // stride + 1 for s in xp.shape[1:])
    cols = _im2col(xp, k, stride, out_shape)
    w2 = weight.data.reshape(c_out, -1)
    out = (w2 @ cols).reshape((c_out,) + out_shape)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape((-1,) + (1,) * nd)
        parents += (bias,)

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gx = gw = None
        if x.requires_grad:
            dcols = w2.T @ g2
            gx = _crop(_col2im(dcols, x.shape[0], k, stride, out_shape, xp.shape[1:]), padding)
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    return make_node(out, parents, backward, name)


def _conv_transpose(name, nd, x, weight, bias, stride, padding):
    x, weight = as_tensor(x), as_tensor(weight)
    _check(name, x, weight, nd, in_axis=0)
    k = weight.shape[2]
    c_in, c_out = weight.shape[:2]
    in_shape = x.shape[1:]
    padded = tuple((s - 1) * stride + k for s in in_shape)
    if any(p - 2 * padding < 1 for p in padded):
        raise ShapeError(f"{name}: padding {padding} too large for input {x.shape}")
    w2 = weight.data.reshape(c_in, -1)
    x2 = x.data.reshape(c_in, -1)
    out = _crop(_col2im(w2.T @ x2, c_out, k, stride, in_shape, padded), padding)
    out = np.ascontiguousarray(out)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape((-1,) + (1,) * nd)
        parents += (bias,)

    def backward(g):
        gcols = _im2col(_pad(g, padding), k, stride, in_shape)
        gx = gw = None
        if x.requires_grad:
            gx = (w2 @ gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = (x2 @ gcols.T).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(c_out, -1).sum(axis=1))
        return tuple(grads)

    return make_node(out, parents, backward, name)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlate a (C_in, H, W) input with a (C_out, C_in, k, k) kernel."""
    return _conv("conv2d", 2, x, weight, bias, stride, padding)


def conv3d(x, weight, bias=None, stride=1, padding=0):
    return _conv("conv3d", 3, x, weight, bias, stride, padding)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of :func:`conv2d`; output extent is ``(H - 1) * stride - 2 * padding + k``."""
    return _conv_transpose("conv_transpose2d", 2, x, weight, bias, stride, padding)


def conv_transpose3d(x, weight, bias=None, stride=1, padding=0):
    return _conv_transpose("conv_transpose3d", 3, x, weight, bias, stride, padding)
