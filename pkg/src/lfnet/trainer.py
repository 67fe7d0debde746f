"""Training, finetuning and evaluation drivers."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import diffcore as dc
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .diffcore import AdamState, TrainingDivergence, adam_step
from .encoder import EncoderConfig, NumericError
from .lightfield import LightFieldModel, ModelConfig, render_image
from .losses import total_loss
from .metrics import psnr, ssim
from .scenes import DatasetError, import_dataset

FINETUNE_STEP_CAP = 10_000
CHECKPOINT_NAME = "checkpoint.lfn"
LOG_NAME = "metrics.jsonl"

# Scaled-down encoder for single-core runs; same topology, narrower and shallower.
MICRO_ENCODER = dict(
    depth=16, image_width=26, pose_width=6, stem_width=32, widths_2d=(32, 64, 64, 128),
    blocks_2d=(1, 1, 1, 1, 1), lift_widths=(128, 256), width_3d_down=32, blocks_3d=(1, 1, 1),
)
# Smallest consistent network (16x16 images and up); for tests and gradient checks.
TINY_ENCODER = dict(
    channels=6, depth=4, image_width=8, pose_width=4, stem_width=8, widths_2d=(8, 8, 8, 8),
    blocks_2d=(1, 1, 1, 1, 1), lift_widths=(16,), width_3d_down=6, blocks_3d=(1, 1, 1),
)
ARCH_PRESETS = {"paper": {}, "micro": MICRO_ENCODER, "tiny": TINY_ENCODER}
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = ""
    n_inputs: int = 2
    input_views: tuple = None  # fixed input view indices; random train views when None
    image_size: int = 64
    n_coarse: int = 64
    n_fine: int = 32
    lr: float = 1e-4
    max_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 500
    precision: str = "float32"
    arch: str = "paper"
    log_every: int = 1

    def __post_init__(self):
        if self.input_views is not None:
            self.input_views = tuple(int(i) for i in self.input_views)
            self.n_inputs = len(self.input_views)
        if not 1 <= self.n_inputs <= 6:
            raise ConfigError(f"input-view count must be in 1..6, got {self.n_inputs}")
        if self.n_coarse < 1 or self.n_fine < 0:
            raise ConfigError("need n_coarse >= 1 and n_fine >= 0")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.max_steps < 0 or self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("max_steps must be >= 0, checkpoint_every and log_every >= 1")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.arch not in ARCH_PRESETS:
            raise ConfigError(f"arch must be one of {sorted(ARCH_PRESETS)}")
        if self.image_size % 8:
            raise ConfigError(f"image size must be a multiple of 8, got {self.image_size}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        if d["input_views"] is not None:
            d["input_views"] = list(d["input_views"])
        return d

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def model_config(self):
        enc = EncoderConfig(**ARCH_PRESETS[self.arch])
        return ModelConfig(encoder=enc, n_coarse=self.n_coarse, n_fine=self.n_fine)


def load_scenes(path):
    """All scenes under ``path``: a manifest file, a scene directory, or a directory of scenes."""
    path = Path(path)
    if path.is_file():
        return [import_dataset(path)]
    if (path / "manifest.json").is_file():
        return [import_dataset(path / "manifest.json")]
    manifests = sorted(path.glob("*/manifest.json"))
    if not manifests:
        raise DatasetError(f"no scene manifests found under {path}")
    return [import_dataset(m) for m in manifests]


def _view_indices(manifest, split):
    return [i for i, v in enumerate(manifest.views) if v.split == split]


@dataclass
class TrainState:
    model: LightFieldModel
    adam: AdamState
    rng: np.random.Generator
    step: int = 0


def init_state(config):
    with dc.precision(PRECISIONS[config.precision]):
        model = LightFieldModel(config.model_config(), np.random.default_rng([config.seed, 1]))
    return TrainState(model, AdamState(), np.random.default_rng([config.seed, 2]))


def state_to_checkpoint(config, state):
    return Checkpoint(
        config=config.to_dict(),
        step=state.step,
        rng_state=state.rng.bit_generator.state,
        params={n: p.data for n, p in state.model.named_parameters()},
        adam_m=dict(state.adam.m),
        adam_v=dict(state.adam.v),
    )


def state_from_checkpoint(ckpt, config=None):
    config = config or TrainConfig.from_dict(ckpt.config)
    state = init_state(config)
    state.model.load_state_dict(ckpt.params)
    dtype = PRECISIONS[config.precision]
    state.adam = AdamState(
        step=ckpt.step,
        m={n: a.astype(dtype) for n, a in ckpt.adam_m.items()},
        v={n: a.astype(dtype) for n, a in ckpt.adam_v.items()},
    )
    state.rng.bit_generator.state = ckpt.rng_state
    state.step = ckpt.step
    return config, state


def _inputs(manifest, indices):
    return [(manifest.views[i].image_float, manifest.views[i].camera) for i in indices]


def sample_batch(scenes, config, rng, split="train"):
    """Pick a scene, its input views and one held-in target view."""
    scene = scenes[int(rng.integers(len(scenes)))]
    pool = _view_indices(scene, split)
    if config.input_views is not None:
        inputs = list(config.input_views)
    else:
        if len(pool) < config.n_inputs:
            raise ConfigError(f"{scene.scene_id}: {len(pool)} {split} views < {config.n_inputs} inputs")
        inputs = sorted(int(i) for i in rng.choice(pool, config.n_inputs, replace=False))
    target = int(pool[int(rng.integers(len(pool)))])
    return scene, inputs, target


def train_step(state, scenes, config, lr):
    """One optimizer step; returns the :class:`LossReport`.

    Raises :class:`TrainingDivergence` without touching parameters when the loss
    or any gradient is not finite.
    """
    scene, inputs, target = sample_batch(scenes, config, state.rng)
    view = scene.views[target]
    out = render_image(state.model, _inputs(scene, inputs), view.camera, state.rng)
    loss, report = total_loss(out, view.image_float)
    if not np.isfinite(report.total):
        raise TrainingDivergence(f"non-finite loss at step {state.step}")
    named = dict(state.model.named_parameters())
    for p in named.values():
        p.grad = None
    loss.backward()
    adam_step({n: p.data for n, p in named.items()}, {n: p.grad for n, p in named.items()},
              state.adam, lr)
    state.step += 1
    return report


@dataclass
class TrainResult:
    checkpoint: Path
    log: list = field(default_factory=list)
    state: TrainState = None


def _run(config, state, scenes, out_dir, lr, max_steps, log_fn=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    log = []
    with threadpool_limits(1), dc.precision(PRECISIONS[config.precision]), \
            open(out_dir / LOG_NAME, "a", encoding="utf-8") as fh:
        while state.step < max_steps:
            t0 = time.perf_counter()
            try:
                report = train_step(state, scenes, config, lr)
            except (TrainingDivergence, NumericError):
                # parameters are untouched by the failed step, so they are the last good ones
                save_checkpoint(ckpt_path, state_to_checkpoint(config, state))
                raise
            rec = {"step": state.step, **report.as_dict(),
                   "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)}
            log.append(rec)
            if state.step % config.log_every == 0 or state.step == max_steps:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                if log_fn:
                    log_fn(rec)
            if state.step % config.checkpoint_every == 0:
                save_checkpoint(ckpt_path, state_to_checkpoint(config, state))
        save_checkpoint(ckpt_path, state_to_checkpoint(config, state))
    return TrainResult(ckpt_path, log, state)


def train(config, out_dir, resume=None, scenes=None, log_fn=None):
    """Train from scratch (or resume from a checkpoint path) up to ``config.max_steps``."""
    scenes = scenes if scenes is not None else load_scenes(config.dataset)
    for sc in scenes:
        if (sc.height, sc.width) != (config.image_size, config.image_size):
            raise ConfigError(f"{sc.scene_id} is {sc.height}x{sc.width}, config image_size is {config.image_size}")
    if resume is not None:
        _, state = state_from_checkpoint(load_checkpoint(resume), config)
    else:
        state = init_state(config)
    return _run(config, state, scenes, out_dir, config.lr, config.max_steps, log_fn)


def check_finetune_steps(steps):
    if steps < 0:
        raise ConfigError("finetune steps must be >= 0")
    if steps > FINETUNE_STEP_CAP:
        raise ConfigError(f"finetuning is capped at {FINETUNE_STEP_CAP} steps, got {steps}")
    return steps


def finetune(checkpoint, scene, out_dir, steps, input_views=None, lr=1e-5, seed=0, log_fn=None):
    """Optimize all parameters on one scene's input views only.

    The target of every step is one of the input views. ``steps`` is capped at
    :data:`FINETUNE_STEP_CAP`; the step counter restarts at zero.
    """
    check_finetune_steps(steps)
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    base = TrainConfig.from_dict(ckpt.config)
    views = list(input_views) if input_views is not None else _view_indices(scene, "train")
    config = base.replace(input_views=tuple(views), lr=lr, max_steps=steps, seed=seed,
                          checkpoint_every=max(steps, 1))
    _, state = state_from_checkpoint(ckpt, config)
    state.step = 0
    state.adam = AdamState()
    state.rng = np.random.default_rng([seed, 3])
    restricted = dataclasses.replace(
        scene, views=[v if i in views else dataclasses.replace(v, split="test")
                      for i, v in enumerate(scene.views)])
    return _run(config, state, [restricted], out_dir, lr, steps, log_fn)


def load_model(checkpoint):
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    config, state = state_from_checkpoint(ckpt)
    return config, state.model


def model_renderer(model, precision="float32"):
    """Deterministic renderer ``(inputs, camera) -> (H, W, 3)`` for :func:`evaluate`."""
    def render(inputs, camera):
        with dc.no_grad(), dc.precision(PRECISIONS[precision]):
            out = render_image(model, inputs, camera)
        return np.clip(out.image.data, 0.0, 1.0)
    return render


def nearest_input_renderer(inputs, camera):
    """Baseline: copy the input view whose camera centre is closest to the target's."""
    dists = [np.linalg.norm(cam.T - camera.T) for _, cam in inputs]
    return inputs[int(np.argmin(dists))][0]


@dataclass
class EvalReport:
    rows: list
    mean_psnr: float
    mean_ssim: float
    per_scene: dict

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=1, allow_nan=True)

    def table(self):
        lines = [f"{'scene':<12} {'view':>5} {'psnr':>8} {'ssim':>7}"]
        for r in self.rows:
            lines.append(f"{r['scene']:<12} {r['view']:>5d} {r['psnr']:>8.3f} {r['ssim']:>7.4f}")
        for sid, s in self.per_scene.items():
            lines.append(f"{sid:<12} {'mean':>5} {s['psnr']:>8.3f} {s['ssim']:>7.4f}")
        lines.append(f"{'all':<12} {'mean':>5} {self.mean_psnr:>8.3f} {self.mean_ssim:>7.4f}")
        return "\n".join(lines)


def evaluate(renderer, scenes, split="test", input_views=None):
    """Render every ``split`` view of every scene from its input views and score it.

    ``renderer(inputs, camera) -> image``; ``inputs`` defaults to each scene's
    ``train`` views. Nothing passed in is modified.
    """
    rows = []
    for scene in scenes:
        targets = _view_indices(scene, split)
        if not targets:
            raise ConfigError(f"{scene.scene_id}: no views in split {split!r}")
        src = list(input_views) if input_views is not None else _view_indices(scene, "train")
        inputs = _inputs(scene, src)
        for t in targets:
            view = scene.views[t]
            pred = renderer(inputs, view.camera)
            gt = view.image_float
            rows.append({"scene": scene.scene_id, "view": t, "psnr": psnr(pred, gt), "ssim": ssim(pred, gt)})
    per_scene = {}
    for sid in dict.fromkeys(r["scene"] for r in rows):
        sel = [r for r in rows if r["scene"] == sid]
        per_scene[sid] = {"psnr": float(np.mean([r["psnr"] for r in sel])),
                          "ssim": float(np.mean([r["ssim"] for r in sel]))}
    return EvalReport(rows, float(np.mean([r["psnr"] for r in rows])),
                      float(np.mean([r["ssim"] for r in rows])), per_scene)
