"""Scaled-down training experiments shared by the acceptance suite and the example scripts.

Both use the ``micro`` architecture at 64x64 with 16 + 8 samples per ray, which trains
in minutes on one CPU core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenes import generate_dataset
from .trainer import (
    TrainConfig, _run, evaluate, finetune, init_state, load_scenes, model_renderer,
    nearest_input_renderer,
)

RING_VIEWS = 8
INPUT_VIEWS = (0, 4)
MICRO = dict(image_size=64, n_coarse=16, n_fine=8, arch="micro", lr=5e-4)


@dataclass
class OverfitResult:
    seed: int
    steps: int
    psnr: float  # mean over the training views at ``steps``
    history: list = field(default_factory=list)  # (step, mean psnr)
    seconds: float = 0.0
    losses: list = field(default_factory=list)  # per-step log records


def overfit_experiment(seed, workdir, max_steps=2000, eval_every=250, target_psnr=28.0,
                       data_seed=0, log_fn=None):
    """Fit one procedural scene from 8 ring views; stop once ``target_psnr`` is reached.

    Inputs are views 0 and 4; every step targets one of the 8 views. Training views
    are scored every ``eval_every`` steps with the deterministic renderer.
    """
    workdir = Path(workdir)
    data = workdir / "data"
    if not (data / "scene_0000" / "manifest.json").exists():
        generate_dataset(data, seed=data_seed, n_scenes=1, n_views=RING_VIEWS, size=64, elevation=20.0)
    scenes = load_scenes(data)
    config = TrainConfig(dataset=str(data), input_views=INPUT_VIEWS, max_steps=max_steps, seed=seed,
                         checkpoint_every=max_steps, log_every=1, **MICRO)
    state = init_state(config)
    t0 = time.perf_counter()
    history, losses = [], []
    psnr = float("-inf")
    while state.step < max_steps:
        stop = min(state.step + eval_every, max_steps)
        res = _run(config, state, scenes, workdir / f"seed{seed}", config.lr, stop, log_fn)
        losses.extend(res.log)
        psnr = evaluate(model_renderer(state.model), scenes, split="train", input_views=INPUT_VIEWS).mean_psnr
        history.append((state.step, psnr))
        if psnr >= target_psnr:
            break
    return OverfitResult(seed, state.step, psnr, history, time.perf_counter() - t0, losses)


@dataclass
class GeneralizationResult:
    model_psnr: float
    baseline_psnr: float
    finetuned_psnr: float
    train_steps: int
    finetune_steps: int
    seconds: float
    checkpoint: Path = None
    per_scene: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.model_psnr - self.baseline_psnr


def generalization_experiment(workdir, train_steps=10000, finetune_steps=200, n_train=20, n_test=5,
                              seed=0, data_seed=0, lr_drop_step=None, late_lr=1e-4, log_fn=None):
    """Train on ``n_train`` scenes, score ``n_test`` unseen ones, then finetune per test scene.

    Every scene is an 8-view ring; views 0 and 4 are the inputs. Training runs at
    the micro learning rate up to ``lr_drop_step`` (default: 90% of ``train_steps``)
    and at ``late_lr`` after that. Test scenes are scored on their 6 held-out views
    against copying the nearest input view. Finetuning (lr 1e-5) uses the two input
    views of each test scene only.
    """
    workdir = Path(workdir)
    train_dir, test_dir = workdir / "train", workdir / "test"
    if not train_dir.exists():
        generate_dataset(train_dir, seed=data_seed, n_scenes=n_train, n_views=RING_VIEWS, size=64,
                         elevation=20.0)
        generate_dataset(test_dir, seed=data_seed, n_scenes=n_test, n_views=RING_VIEWS, size=64,
                         elevation=20.0, input_views=INPUT_VIEWS, first_index=n_train)
    train_scenes, test_scenes = load_scenes(train_dir), load_scenes(test_dir)
    config = TrainConfig(dataset=str(train_dir), input_views=INPUT_VIEWS, max_steps=train_steps,
                         seed=seed, checkpoint_every=train_steps, log_every=100, **MICRO)
    drop = int(0.9 * train_steps) if lr_drop_step is None else min(lr_drop_step, train_steps)
    t0 = time.perf_counter()
    state = init_state(config)
    res = _run(config, state, train_scenes, workdir / "run", config.lr, drop, log_fn)
    if drop < train_steps:
        res = _run(config, state, train_scenes, workdir / "run", late_lr, train_steps, log_fn)
    model_rep = evaluate(model_renderer(state.model), test_scenes)
    base_rep = evaluate(nearest_input_renderer, test_scenes)
    finetuned = []
    per_scene = {}
    for scene in test_scenes:
        ft = finetune(res.checkpoint, scene, workdir / "finetune" / scene.scene_id, finetune_steps,
                      input_views=INPUT_VIEWS, seed=seed)
        rep = evaluate(model_renderer(ft.state.model), [scene])
        finetuned.extend(r["psnr"] for r in rep.rows)
        per_scene[scene.scene_id] = {"model": model_rep.per_scene[scene.scene_id]["psnr"],
                                     "baseline": base_rep.per_scene[scene.scene_id]["psnr"],
                                     "finetuned": rep.mean_psnr}
    return GeneralizationResult(model_rep.mean_psnr, base_rep.mean_psnr, float(np.mean(finetuned)),
                                train_steps, finetune_steps, time.perf_counter() - t0,
                                res.checkpoint, per_scene)
