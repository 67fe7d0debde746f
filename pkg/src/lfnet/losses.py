"""Training objective: fine L2, coarse L2 and edge-aware depth smoothness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError

OPACITY_MASK = 1e-3


@dataclass
class LossReport:
    fine: float
    coarse_rgb: float
    depth_smooth: float
    total: float

    def as_dict(self):
        return {"fine": self.fine, "coarse_rgb": self.coarse_rgb,
                "depth_smooth": self.depth_smooth, "total": self.total}


def _same_shape(name, a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{name}: prediction {tuple(a.shape)} vs target {tuple(b.shape)}")


def loss_fine(pred, gt):
    """Mean squared error between the final (H, W, 3) image and the ground truth."""
    _same_shape("loss_fine", pred, gt)
    return dc.mean(dc.square(dc.as_tensor(pred) - np.asarray(gt)))


def downsample(image, factor=4):
    """Box-average an (H, W, 3) image by ``factor`` along both axes."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise ShapeError(f"image {image.shape} not divisible by {factor}")
    return image.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))


def loss_coarse_rgb(coarse_rgb, gt_small):
    """MSE between the first three composited channels (3, H_V, W_V) and the (H_V, W_V, 3) target."""
    gt_chw = np.asarray(gt_small).transpose(2, 0, 1)
    _same_shape("loss_coarse_rgb", coarse_rgb, gt_chw)
    return dc.mean(dc.square(dc.as_tensor(coarse_rgb) - gt_chw))


def loss_depth_smooth(depth, gt_small, opacity=None):
    """Edge-aware first-order smoothness of an (H_V, W_V) depth map.

    Forward differences along rows and columns are weighted by
    ``exp(-|image difference|_2)`` and summed, then divided by ``H_V * W_V``.
    Differences touching a pixel with opacity below 1e-3 are masked out.
    """
    depth = dc.as_tensor(depth)
    gt = np.asarray(gt_small, dtype=np.float64)
    h, w = depth.shape
    if gt.shape[:2] != (h, w):
        raise ShapeError(f"loss_depth_smooth: depth {depth.shape} vs image {gt.shape}")
    edge_u = np.exp(-np.linalg.norm(gt[1:] - gt[:-1], axis=-1))
    edge_v = np.exp(-np.linalg.norm(gt[:, 1:] - gt[:, :-1], axis=-1))
    if opacity is not None:
        occ = np.asarray(opacity.data if hasattr(opacity, "data") else opacity) >= OPACITY_MASK
        edge_u = edge_u * (occ[1:] & occ[:-1])
        edge_v = edge_v * (occ[:, 1:] & occ[:, :-1])
    du = dc.abs(depth[1:] - depth[:-1]) * edge_u
    dv = dc.abs(depth[:, 1:] - depth[:, :-1]) * edge_v
    return (dc.sum(du) + dc.sum(dv)) * (1.0 / (h * w))


def total_loss(output, gt):
    """Sum of the three terms for a :class:`~lfnet.lightfield.RenderOutput`.

    Returns the scalar loss tensor and a :class:`LossReport` of float values.
    """
    gt = np.asarray(gt)
    gt_small = downsample(gt)
    lf = loss_fine(output.image, gt)
    lc = loss_coarse_rgb(output.coarse_rgb, gt_small)
    ld = loss_depth_smooth(output.depth, gt_small, output.opacity)
    total = lf + lc + ld
    # report the float sum of the float terms so the identity holds exactly
    terms = [float(lf.data), float(lc.data), float(ld.data)]
    report = LossReport(*terms, total=terms[0] + terms[1] + terms[2])
    return total, report
