"""Light-field head f(ray, feature) -> RGB and the end-to-end rendering pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .aggregation import aggregate, resample_to_target
from .diffcore import Linear, Module, Tensor
from .encoder import Encoder, EncoderConfig, NumericError, relative_pose
from .geometry import ENCODED_DIM, plucker_coords, positional_encode, ray_grid, stratified_depths
from .renderer import Upsampler, coarse_to_fine, composite

FEATURE_SCALE = 4


class LightFieldConfigError(ValueError):
    pass


@dataclass
class LightFieldConfig:
    hidden: int = 256
    feature_dim: int = 30
    encoding_dim: int = ENCODED_DIM
    modulated_layers: int = 5  # LR_2 .. LR_6

    def __post_init__(self):
        if min(self.hidden, self.feature_dim, self.encoding_dim) < 1 or self.modulated_layers < 0:
            raise LightFieldConfigError("light-field widths must be positive")


class LightFieldHead(Module):
    """Feature-modulated MLP.

    ``m = relu(W0 f)``, ``h = relu(W1 PE(r))``, then ``h = relu(Wk (h * m))`` for each
    modulated layer, and ``rgb = sigmoid(Wout h)``.
    """

    def __init__(self, config, rng):
        self.config = config
        self.feature_in = Linear(config.feature_dim, config.hidden, rng)
        self.ray_in = Linear(config.encoding_dim, config.hidden, rng)
        # unit gain offsets the growth from multiplying by the modulation
        self.layers = [Linear(config.hidden, config.hidden, rng, gain=1.0)
                       for _ in range(config.modulated_layers)]
        self.rgb_out = Linear(config.hidden, 3, rng, gain=0.1)
        self.evaluations = 0

    def __call__(self, encoded_rays, features):
        cfg = self.config
        encoded_rays, features = dc.as_tensor(encoded_rays), dc.as_tensor(features)
        if encoded_rays.shape[-1] != cfg.encoding_dim or features.shape[-1] != cfg.feature_dim:
            raise LightFieldConfigError(
                f"expected ray encodings of width {cfg.encoding_dim} and features of width "
                f"{cfg.feature_dim}, got {encoded_rays.shape} and {features.shape}"
            )
        if encoded_rays.shape[0] != features.shape[0]:
            raise LightFieldConfigError(
                f"batch mismatch: {encoded_rays.shape[0]} rays vs {features.shape[0]} features"
            )
        self.evaluations += encoded_rays.shape[0]
        mod = dc.relu(self.feature_in(features))
        h = dc.relu(self.ray_in(encoded_rays))
        for layer in self.layers:
            h = dc.relu(layer(h * mod))
        return dc.sigmoid(self.rgb_out(h))


def lf_forward(head, encoded_rays, features):
    return head(encoded_rays, features)


class VolumetricBaseline(Module):
    """Per-sample radiance decoder (features + encoded point -> rgb, density).

    Only used to instrument query counts and timing against the light-field head.
    """

    def __init__(self, feature_dim, rng, hidden=256, n_freqs=6):
        self.n_freqs = n_freqs
        self.hidden_layer = Linear(feature_dim + 3 * (1 + 2 * n_freqs), hidden, rng)
        self.out = Linear(hidden, 4, rng, gain=1.0)
        self.evaluations = 0

    def decode(self, points, features):
        self.evaluations += points.shape[0]
        enc = positional_encode(points, self.n_freqs)
        x = dc.concat([dc.as_tensor(features), dc.Tensor(enc, dtype=np.asarray(features).dtype)], axis=-1)
        return self.out(dc.relu(self.hidden_layer(x)))

    def render(self, points, features, depths, z_near, z_far, chunk=1 << 16):
        """Decode every sample of every ray and alpha-composite; returns (rays, 3) colors.

        ``points`` (R, N, 3), ``features`` (R, N, F), ``depths`` (R, N).
        """
        rays, n = depths.shape
        flat_pts = points.reshape(-1, 3)
        flat_feat = features.reshape(-1, features.shape[-1])
        raw = np.empty((flat_pts.shape[0], 4), dtype=flat_feat.dtype)
        with dc.no_grad():
            for s in range(0, flat_pts.shape[0], chunk):
                raw[s:s + chunk] = self.decode(flat_pts[s:s + chunk], flat_feat[s:s + chunk]).data
        raw = raw.reshape(rays, n, 4)
        rgb = 1.0 / (1.0 + np.exp(-raw[..., :3]))
        sigma = np.logaddexp(0, raw[..., 3])
        delta = np.concatenate([np.diff(depths, axis=1), np.full((rays, 1), (z_far - z_near) / n)], axis=1)
        tau = sigma * delta
        trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
        w = trans * (1 - np.exp(-tau))
        return (w[..., None] * rgb).sum(axis=1)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lightfield: LightFieldConfig = None
    n_coarse: int = 64
    n_fine: int = 32

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.lightfield, dict):
            self.lightfield = LightFieldConfig(**self.lightfield)
        if self.lightfield is None:
            self.lightfield = LightFieldConfig(feature_dim=self.encoder.feature_dim)
        if self.lightfield.feature_dim != self.encoder.feature_dim:
            raise LightFieldConfigError(
                f"head feature width {self.lightfield.feature_dim} != encoder feature width "
                f"{self.encoder.feature_dim}"
            )
        if self.n_coarse < 1 or self.n_fine < 0:
            raise LightFieldConfigError("need n_coarse >= 1 and n_fine >= 0")


class LightFieldModel(Module):
    """Parameter tree of the full pipeline: encoder E, feature upsampler and head f."""

    def __init__(self, config, rng):
        self.config = config
        self.encoder = Encoder(config.encoder, rng)
        self.upsampler = Upsampler(config.encoder.feature_dim, rng)
        self.head = LightFieldHead(config.lightfield, rng)


@dataclass
class RenderOutput:
    image: Tensor  # (H, W, 3)
    coarse_rgb: Tensor  # (3, H_V, W_V)
    depth: Tensor  # (H_V, W_V)
    opacity: Tensor  # (H_V, W_V)
    coarse: object  # RenderedFeatures of the coarse pass
    fine: object  # RenderedFeatures of the fine pass


def encode_target_rays(target):
    """Positional encodings (H * W, 78) of the target's Plücker rays."""
    origins, dirs = ray_grid(target)
    return positional_encode(plucker_coords(origins.reshape(-1, 3), dirs.reshape(-1, 3)))


def _check(stage, t):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values after stage {stage!r}")
    return t


def render_image(model, inputs, target, rng=None, n_coarse=None, n_fine=None, volumes=None):
    """Render the target view from posed input images.

    ``inputs`` is a list of ``(image, camera)`` with images (H, W, 3) in [0, 1].
    ``rng`` drives stratified and importance sampling (bin midpoints and a fixed
    seed when ``None``). Returns a :class:`RenderOutput`.
    """
    if not inputs:
        raise ValueError("need at least one input view")
    cfg = model.config
    n_coarse = cfg.n_coarse if n_coarse is None else n_coarse
    n_fine = cfg.n_fine if n_fine is None else n_fine
    h, w = target.height, target.width
    for _, cam in inputs:
        if (cam.height, cam.width) != (h, w):
            raise ValueError("input and target cameras must share the image size")
    if volumes is None:
        volumes = []
        for image, cam in inputs:
            img = np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1))
            volumes.append(model.encoder(img, relative_pose(cam, target)))
    small = target.scaled(1.0 / FEATURE_SCALE)
    rays = small.height * small.width
    zn, zf = target.z_near, target.z_far

    def build(depths):
        views = [resample_to_target(vol, cam, small, depths) for vol, (_, cam) in zip(volumes, inputs)]
        return aggregate(views, depths)

    sample_rng = rng if rng is not None else np.random.default_rng(0)
    depths = stratified_depths(zn, zf, n_coarse, None if rng is None else sample_rng, batch=rays)
    coarse = composite(build(depths), depths, zn, zf)
    _check("coarse composite", coarse.features)
    fine = coarse_to_fine(coarse, build, n_fine, sample_rng, zn, zf)
    _check("fine composite", fine.features)
    feats = _check("upsampling", model.upsampler(fine.features))  # (F, H, W)
    feats = dc.transpose(feats.reshape(feats.shape[0], h * w), (1, 0))
    enc = encode_target_rays(target)
    rgb = _check("light field", model.head(enc, feats))
    return RenderOutput(
        image=rgb.reshape(h, w, 3),
        coarse_rgb=coarse.rgb,
        depth=coarse.depth,
        opacity=coarse.opacity,
        coarse=coarse,
        fine=fine,
    )


@dataclass
class StageTiming:
    head_evaluations: int
    baseline_evaluations: int
    head_seconds: float
    baseline_seconds: float

    @property
    def ratio(self):
        return self.baseline_evaluations / self.head_evaluations

    @property
    def speedup(self):
        return self.baseline_seconds / self.head_seconds


def time_decode_stages(model, baseline, volumes, inputs, target, n_samples, repeats=1):
    """Wall time of the per-ray head versus per-sample volumetric decoding for one view.

    Both stages start from already gathered features: the head consumes the
    composited feature image, the baseline consumes features resampled at every
    sample of every full-resolution ray. Best of ``repeats`` runs.
    """
    import time

    h, w = target.height, target.width
    zn, zf = target.z_near, target.z_far
    with dc.no_grad():
        small = target.scaled(1.0 / FEATURE_SCALE)
        d_small = stratified_depths(zn, zf, n_samples, batch=small.height * small.width)
        views = [resample_to_target(v, cam, small, d_small) for v, (_, cam) in zip(volumes, inputs)]
        composited = composite(aggregate(views, d_small), d_small, zn, zf).features
        depths = stratified_depths(zn, zf, n_samples, batch=h * w)
        views = [resample_to_target(v, cam, target, depths) for v, (_, cam) in zip(volumes, inputs)]
        full = aggregate(views, depths).data.data  # (F + 1, N, H, W)
        feats = np.ascontiguousarray(full[1:].reshape(full.shape[0] - 1, n_samples, h * w).transpose(2, 1, 0))
        origins, dirs = ray_grid(target)
        points = origins.reshape(-1, 1, 3) + depths[..., None] * dirs.reshape(-1, 1, 3)
        points = points.astype(feats.dtype)

        head_t, base_t = [], []
        head_before, base_before = model.head.evaluations, baseline.evaluations
        for _ in range(repeats):
            t0 = time.perf_counter()
            up = model.upsampler(composited)
            up = dc.transpose(up.reshape(up.shape[0], h * w), (1, 0))
            model.head(encode_target_rays(target), up)
            head_t.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            baseline.render(points, feats, depths, zn, zf)
            base_t.append(time.perf_counter() - t0)
    return StageTiming(
        head_evaluations=(model.head.evaluations - head_before) // repeats,
        baseline_evaluations=(baseline.evaluations - base_before) // repeats,
        head_seconds=min(head_t),
        baseline_seconds=min(base_t),
    )
