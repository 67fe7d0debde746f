"""Resample per-view feature volumes into the target frustum and fuse them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, ShapeError, Tensor
from .encoder import CONFIDENCE, FeatureVolume
from .geometry import ray_grid, world_to_input_ndc


@dataclass
class TargetVolume:
    data: Tensor  # (C - 1, N, H_V, W_V): density logit, then features
    depths: np.ndarray  # (H_V * W_V, N), row-major over the target grid


def target_points(target_cam, depths):
    """World points (H_V * W_V, N, 3) along the rays of ``target_cam`` at ``depths``."""
    origins, dirs = ray_grid(target_cam)
    dirs = dirs.reshape(-1, 3)
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim == 1:
        depths = np.broadcast_to(depths, (dirs.shape[0], depths.size))
    if depths.shape[0] != dirs.shape[0]:
        raise ShapeError(f"depths {depths.shape} do not match {dirs.shape[0]} target rays")
    return target_cam.T + depths[..., None] * dirs[:, None, :]


def resample_to_target(volume, input_cam, target_cam, depths):
    """Sample an input view's (C, D, h, w) volume along the target rays.

    ``target_cam`` describes the low-resolution target grid (H_V x W_V). Returns
    a (C, N, H_V, W_V) tensor; points outside the input frustum or behind the
    input camera read as zero.
    """
    data = volume.data if isinstance(volume, FeatureVolume) else volume
    pts = target_points(target_cam, depths)
    rays, n = pts.shape[:2]
    ndc, _ = world_to_input_ndc(pts.reshape(-1, 3), input_cam)
    sampled = dc.trilinear_sample(data, ndc)  # (rays * n, C)
    c = data.shape[0]
    out = sampled.reshape(target_cam.height, target_cam.width, n, c)
    return dc.transpose(out, (3, 2, 0, 1))


def aggregate(views, depths=None):
    """Confidence-weighted average of per-view target volumes.

    The confidence channel is softmax-normalised across views at every voxel and
    dropped from the output.
    """
    if not views:
        raise ContractError("aggregate needs at least one view")
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise ShapeError(f"views have differing shapes: {sorted(shapes)}")
    stacked = dc.stack(views, axis=0)  # (K, C, N, H, W)
    logits = stacked[:, CONFIDENCE]
    weights = dc.softmax(logits, axis=0)
    payload = stacked[:, CONFIDENCE + 1:]
    if len(views) == 1:
        fused = payload[0] * weights[0]
    else:
        fused = dc.sum(payload * dc.reshape(weights, (len(views), 1) + weights.shape[1:]), axis=0)
    return TargetVolume(fused, depths)


def view_weights(views):
    """Softmax confidence weights (K, N, H, W) without building a graph."""
    logits = np.stack([v.data[CONFIDENCE] for v in views])
    logits = logits - logits.max(axis=0)
    e = np.exp(logits)
    return e / e.sum(axis=0)
