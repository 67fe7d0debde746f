"""Alpha-compositing of target volumes and learned feature upsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Conv, Module, Tensor
from .geometry import importance_depths

DEPTH_EPS = 1e-8


@dataclass
class RenderedFeatures:
    features: Tensor  # (C - 2, H_V, W_V); channels 0..2 are the coarse RGB
    depth: Tensor  # (H_V, W_V), world units
    opacity: Tensor  # (H_V, W_V), sum of compositing weights
    weights: np.ndarray  # (H_V * W_V, N) compositing weights T * alpha (no graph)
    depths: np.ndarray  # (H_V * W_V, N)

    @property
    def rgb(self):
        return self.features[0:3]


def sample_deltas(depths, z_near, z_far):
    """Gaps between consecutive samples; the last sample gets ``(z_far - z_near) / N``."""
    depths = np.asarray(depths, dtype=np.float64)
    n = depths.shape[-1]
    cap = np.full(depths.shape[:-1] + (1,), (z_far - z_near) / n)
    return np.concatenate([np.diff(depths, axis=-1), cap], axis=-1)


def composite(volume, depths, z_near, z_far):
    """Front-to-back alpha compositing of a (C - 1, N, H_V, W_V) target volume.

    Channel 0 is the density logit (``sigma = softplus(logit)``); the remaining
    channels are composited into the feature image.
    """
    data = volume.data if not isinstance(volume, Tensor) else volume
    depths = np.asarray(depths, dtype=np.float64)
    c1, n, h, w = data.shape
    if depths.shape != (h * w, n):
        raise ContractError(f"depths shape {depths.shape} does not match volume {data.shape}")
    if n > 1 and np.any(np.diff(depths, axis=1) < 0):
        raise ContractError("sample depths must be increasing along each ray")
    flat = data.reshape(c1, n, h * w)
    sigma = dc.softplus(flat[0])  # (N, R)
    delta = sample_deltas(depths, z_near, z_far).T
    tau = sigma * delta
    trans = dc.exp(dc.neg(dc.cumsum(tau, axis=0, exclusive=True)))
    alpha = 1.0 - dc.exp(dc.neg(tau))
    weights = trans * alpha  # (N, R)
    feats = flat[1:]  # (C - 2, N, R)
    composited = dc.sum(feats * weights, axis=1)
    opacity = dc.sum(weights, axis=0)
    depth = dc.sum(weights * depths.T, axis=0) / dc.maximum(opacity, DEPTH_EPS)
    return RenderedFeatures(
        features=composited.reshape(c1 - 1, h, w),
        depth=depth.reshape(h, w),
        opacity=opacity.reshape(h, w),
        weights=weights.data.T.astype(np.float64),
        depths=depths,
    )


def transmittance(volume, depths, z_near, z_far):
    """Per-sample transmittance (R, N) of a target volume, without building a graph."""
    data = volume.data if not isinstance(volume, Tensor) else volume
    c1, n, h, w = data.shape
    sigma = np.logaddexp(0, data.data[0].reshape(n, h * w).T.astype(np.float64))
    tau = sigma * sample_deltas(depths, z_near, z_far)
    return np.exp(-(np.cumsum(tau, axis=1) - tau))


def merge_depths(coarse, fine):
    return np.sort(np.concatenate([coarse, fine], axis=1), axis=1)


def coarse_to_fine(coarse, build_volume, n_fine, rng, z_near, z_far):
    """Importance-resample from the coarse weights and composite again.

    ``build_volume(depths)`` must return the aggregated target volume at the given
    per-ray depths. With ``n_fine == 0`` the coarse result is returned unchanged.
    """
    if n_fine == 0:
        return coarse
    fine = importance_depths(coarse.depths, coarse.weights, n_fine, rng, z_near, z_far)
    merged = merge_depths(coarse.depths, fine)
    return composite(build_volume(merged), merged, z_near, z_far)


class Upsampler(Module):
    """(1x1 conv -> bilinear 2x) twice: (F, H/4, W/4) -> (F, H, W)."""

    def __init__(self, width, rng, identity=False):
        self.conv1 = Conv(2, width, width, 1, rng, gain=1.0)
        self.conv2 = Conv(2, width, width, 1, rng, gain=1.0)
        if identity:
            eye = np.eye(width).reshape(width, width, 1, 1)
            self.conv1.weight.data = eye.astype(self.conv1.weight.dtype)
            self.conv2.weight.data = eye.astype(self.conv2.weight.dtype)

    def __call__(self, features):
        x = dc.upsample2x(self.conv1(features))
        return dc.upsample2x(self.conv2(x))


def upsample_features(upsampler, coarse):
    return upsampler(coarse)
