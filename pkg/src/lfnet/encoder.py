"""Image + relative pose -> C-channel feature volume in the input camera's frustum.

Channel map of a :class:`FeatureVolume` (C channels):

* 0       confidence logit used for multi-view softmax weighting
* 1       density logit (payload 0)
* 2..4    coarse RGB (payload 1..3)
* 5..C-1  generic features
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Conv, Module, Tensor

CONFIDENCE = 0
DENSITY = 1
POSE_DIM = 12


class EncoderConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class EncoderConfig:
    channels: int = 32
    depth: int = 32
    image_width: int = 52
    pose_width: int = 12
    stem_width: int = 64
    # channel widths at full, 1/2, 1/4 and 1/8 resolution
    widths_2d: tuple = (64, 128, 128, 256)
    # residual blocks at: full res, 1/2, 1/4 (down), 1/8, 1/4 (up)
    blocks_2d: tuple = (2, 1, 1, 1, 2)
    lift_widths: tuple = (256, 512)
    width_3d_down: int = 64
    # residual blocks at: full volume res, 1/2 res, after upsampling
    blocks_3d: tuple = (2, 2, 2)
    residual_gain: float = 0.2
    use_pose: bool = True

    def __post_init__(self):
        self.widths_2d = tuple(self.widths_2d)
        self.blocks_2d = tuple(self.blocks_2d)
        self.lift_widths = tuple(self.lift_widths)
        self.blocks_3d = tuple(self.blocks_3d)
        if self.channels < 5:
            raise EncoderConfigError(f"need at least 5 channels, got {self.channels}")
        if self.depth < 2 or self.depth % 2:
            raise EncoderConfigError(f"volume depth must be even and >= 2, got {self.depth}")
        widths = (self.image_width, self.pose_width, self.stem_width, self.width_3d_down,
                  *self.widths_2d, *self.lift_widths)
        if min(widths) < 1:
            raise EncoderConfigError("all layer widths must be positive")
        if len(self.widths_2d) != 4 or len(self.blocks_2d) != 5 or len(self.blocks_3d) != 3:
            raise EncoderConfigError("widths_2d needs 4 entries, blocks_2d 5, blocks_3d 3")

    @property
    def feature_dim(self):
        """Width of the composited feature image (channels minus confidence and density)."""
        return self.channels - 2


@dataclass
class FeatureVolume:
    data: Tensor  # (C, D, H/4, W/4)
    channel_map: dict = field(default_factory=lambda: {"confidence": CONFIDENCE, "density": DENSITY})

    @property
    def shape(self):
        return self.data.shape


class ResBlock(Module):
    """conv3 -> relu -> conv3, plus identity skip, then relu (omitted when ``final``)."""

    def __init__(self, nd, width, rng, gain, final=False):
        self.conv1 = Conv(nd, width, width, 3, rng, padding=1)
        self.conv2 = Conv(nd, width, width, 3, rng, padding=1, gain=gain)
        self.final = final

    def __call__(self, x):
        y = self.conv2(dc.relu(self.conv1(x)))
        y = x + y
        return y if self.final else dc.relu(y)


class Encoder(Module):
    def __init__(self, config, rng):
        cfg = self.config = config
        g = cfg.residual_gain
        w0, w1, w2, w3 = cfg.widths_2d
        b = cfg.blocks_2d
        self.image_in = Conv(2, 3, cfg.image_width, 1, rng)
        self.pose_in = Conv(2, POSE_DIM, cfg.pose_width, 1, rng)
        self.stem = Conv(2, cfg.image_width + cfg.pose_width, cfg.stem_width, 1, rng)
        self.to_w0 = Conv(2, cfg.stem_width, w0, 1, rng) if cfg.stem_width != w0 else None
        self.res_full = [ResBlock(2, w0, rng, g) for _ in range(b[0])]
        self.down1 = Conv(2, w0, w1, 4, rng, stride=2, padding=1)
        self.res_half = [ResBlock(2, w1, rng, g) for _ in range(b[1])]
        self.down2 = Conv(2, w1, w2, 4, rng, stride=2, padding=1)
        self.res_quarter = [ResBlock(2, w2, rng, g) for _ in range(b[2])]
        self.down3 = Conv(2, w2, w3, 4, rng, stride=2, padding=1)
        self.res_eighth = [ResBlock(2, w3, rng, g) for _ in range(b[3])]
        self.up = Conv(2, w3, w2, 4, rng, stride=2, padding=1, transpose=True)
        self.res_up = [ResBlock(2, w2, rng, g) for _ in range(b[4])]
        lift = []
        c_in = w2
        for width in cfg.lift_widths:
            lift.append(Conv(2, c_in, width, 1, rng))
            c_in = width
        self.lift = lift
        self.to_volume = Conv(2, c_in, cfg.channels * cfg.depth, 1, rng)
        c = cfg.channels
        self.vol_in = Conv(3, c, c, 1, rng)
        self.res3_full = [ResBlock(3, c, rng, g) for _ in range(cfg.blocks_3d[0])]
        self.down3d = Conv(3, c, cfg.width_3d_down, 4, rng, stride=2, padding=1)
        self.res3_half = [ResBlock(3, cfg.width_3d_down, rng, g) for _ in range(cfg.blocks_3d[1])]
        self.up3d = Conv(3, cfg.width_3d_down, c, 4, rng, stride=2, padding=1, transpose=True)
        n_last = cfg.blocks_3d[2]
        self.res3_up = [ResBlock(3, c, rng, g, final=(i == n_last - 1)) for i in range(n_last)]
        self.out3d = None if n_last else Conv(3, c, c, 1, rng, gain=1.0)

    def __call__(self, image, relative_pose):
        """Encode a (3, H, W) image in [0, 1] and a 12-vector pose into a FeatureVolume."""
        cfg = self.config
        image = dc.as_tensor(image)
        if image.ndim != 3 or image.shape[0] != 3:
            raise EncoderConfigError(f"image must be (3, H, W), got {image.shape}")
        _, h, w = image.shape
        if h % 8 or w % 8:
            raise EncoderConfigError(f"image size {h}x{w} must be divisible by 8")
        pose = np.asarray(relative_pose, dtype=image.dtype).reshape(POSE_DIM)
        if not np.all(np.isfinite(pose)):
            raise NumericError("relative pose is not finite")
        if not cfg.use_pose:
            pose = np.zeros_like(pose)
        pose_map = np.broadcast_to(pose[:, None, None], (POSE_DIM, h, w))

        x = dc.concat([dc.relu(self.image_in(image)), dc.relu(self.pose_in(pose_map))], axis=0)
        x = dc.relu(self.stem(x))
        if self.to_w0 is not None:
            x = dc.relu(self.to_w0(x))
        for blk in self.res_full:
            x = blk(x)
        x = dc.relu(self.down1(x))
        for blk in self.res_half:
            x = blk(x)
        x = dc.relu(self.down2(x))
        for blk in self.res_quarter:
            x = blk(x)
        skip = x
        x = dc.relu(self.down3(x))
        for blk in self.res_eighth:
            x = blk(x)
        x = dc.relu(self.up(x)) + skip
        for blk in self.res_up:
            x = blk(x)
        for layer in self.lift:
            x = dc.relu(layer(x))
        x = dc.relu(self.to_volume(x))
        vol = x.reshape(cfg.channels, cfg.depth, h // 4, w // 4)

        v = dc.relu(self.vol_in(vol))
        for blk in self.res3_full:
            v = blk(v)
        skip = v
        v = dc.relu(self.down3d(v))
        for blk in self.res3_half:
            v = blk(v)
        v = dc.relu(self.up3d(v)) + skip
        for blk in self.res3_up:
            v = blk(v)
        if self.out3d is not None:
            v = self.out3d(v)
        if not np.all(np.isfinite(v.data)):
            raise NumericError("encoder produced non-finite activations")
        return FeatureVolume(v)


def relative_pose(input_cam, target_cam):
    """Target pose in the input camera frame: row-major ``R_i^T R_t`` then ``R_i^T (T_t - T_i)``."""
    rot = input_cam.R.T @ target_cam.R
    trans = input_cam.R.T @ (target_cam.T - input_cam.T)
    return np.concatenate([rot.reshape(-1), trans])


def compose_relative(rel_ab, rel_bc):
    """Compose two relative poses (A<-B then B<-C) into A<-C."""
    r_ab, t_ab = rel_ab[:9].reshape(3, 3), rel_ab[9:]
    r_bc, t_bc = rel_bc[:9].reshape(3, 3), rel_bc[9:]
    return np.concatenate([(r_ab @ r_bc).reshape(-1), r_ab @ t_bc + t_ab])
