"""Trilinear sampling of a (C, D, H, W) grid at normalized coordinates."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .tensor import ShapeError, as_tensor, make_node


def _axis_weights(coord, n):
    """Lower index, upper index, upper weight and d(index)/d(coord) along one axis.

    Voxel ``i`` is centred at ``(2 i + 1) / n - 1``; coordinates between the
    outermost centre and the cube face clamp to the border voxel.
    """
    pos = ((coord + 1.0) * n - 1.0) / 2.0
    clamped = np.clip(pos, 0, n - 1)
    lo = np.floor(clamped).astype(np.int64)
    lo = np.minimum(lo, max(n - 2, 0))
    hi = np.minimum(lo + 1, n - 1)
    frac = clamped - lo
    slope = np.where((pos > 0) & (pos < n - 1), n / 2.0, 0.0)
    return lo, hi, frac, slope


def trilinear_sample(volume, coords):
    """Sample ``volume`` (C, D, H, W) at ``coords`` (M, 3) ordered (x->W, y->H, z->D).

    Points with any coordinate outside ``[-1, 1]`` read as zero. Returns (M, C).
    Differentiable with respect to both the volume and the coordinates.
    """
    volume, coords = as_tensor(volume), as_tensor(coords)
    if volume.ndim != 4:
        raise ShapeError(f"volume must be (C, D, H, W), got {volume.shape}")
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeError(f"coords must be (M, 3), got {coords.shape}")
    c, d, h, w = volume.shape
    xyz = coords.data
    inside = np.all(np.abs(xyz) <= 1.0, axis=1)
    x0, x1, fx, sx = _axis_weights(xyz[:, 0], w)
    y0, y1, fy, sy = _axis_weights(xyz[:, 1], h)
    z0, z1, fz, sz = _axis_weights(xyz[:, 2], d)
    mask = inside.astype(volume.dtype)
    flat = volume.data.reshape(c, -1).T

    corners = []
    for zi, wz, dz in ((z0, 1 - fz, -1.0), (z1, fz, 1.0)):
        for yi, wy, dy in ((y0, 1 - fy, -1.0), (y1, fy, 1.0)):
            for xi, wx, dx in ((x0, 1 - fx, -1.0), (x1, fx, 1.0)):
                idx = (zi * h + yi) * w + xi
                corners.append((idx, wz, wy, wx, dz, dy, dx))

    m = xyz.shape[0]
    # (M, D*H*W) interpolation matrix, 8 entries per row
    interp = sparse.csr_matrix(
        (
            np.concatenate([wz * wy * wx * mask for _, wz, wy, wx, *_ in corners]).astype(volume.dtype),
            (np.tile(np.arange(m), 8), np.concatenate([cn[0] for cn in corners])),
        ),
        shape=(m, d * h * w),
    )
    out = np.asarray(interp @ flat, dtype=volume.dtype)

    def backward(g):
        gvol = gcoord = None
        gm = g * mask[:, None]
        if volume.requires_grad:
            gflat = np.asarray(interp.T @ g, dtype=volume.dtype)
            gvol = np.ascontiguousarray(gflat.T).reshape(volume.shape)
        if coords.requires_grad:
            gcoord = np.zeros_like(xyz)
            for idx, wz, wy, wx, dz, dy, dx in corners:
                dot = np.einsum("mc,mc->m", flat[idx], gm)
                gcoord[:, 0] += dx * wy * wz * dot
                gcoord[:, 1] += dy * wx * wz * dot
                gcoord[:, 2] += dz * wx * wy * dot
            gcoord *= np.stack([sx, sy, sz], axis=1)
        return gvol, gcoord

    return make_node(out, (volume, coords), backward, "trilinear_sample")
