"""Command-line driver: ``python -m lfnet <subcommand>``.

Exit status: 0 success, 1 usage or input error, 2 numeric failure, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .checkpoint import CheckpointError, load_checkpoint
from .encoder import relative_pose
from .lightfield import VolumetricBaseline, render_image, time_decode_stages
from .scenes import DatasetError, camera_ring, generate_dataset, to_uint8

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config(path):
    """TOML file with TrainConfig keys at top level or under a ``[train]`` table."""
    from .trainer import TrainConfig

    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    data = data.get("train", data)
    return TrainConfig.from_dict(data)


def _train_overrides(p):
    from .trainer import TrainConfig

    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "input_views":
            g.add_argument(flag, type=_int_list, default=None)
        else:
            kind = type(f.default) if f.default is not None else str
            g.add_argument(flag, type=kind, default=None, dest=f.name)


def _apply_overrides(config, args):
    changes = {f.name: getattr(args, f.name) for f in dataclasses.fields(config)
               if getattr(args, f.name, None) is not None}
    return config.replace(**changes) if changes else config


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(args):
    paths = generate_dataset(args.out, seed=args.seed, n_scenes=args.scenes, n_views=args.views,
                             size=args.size, input_views=args.input_views, elevation=args.elevation)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_train(args):
    from .trainer import TrainConfig, train

    if args.config:
        config = read_config(args.config)
    elif args.resume:
        # no config file: carry on with the settings the checkpoint was trained with
        config = TrainConfig.from_dict(load_checkpoint(args.resume).config)
    else:
        config = TrainConfig()
    config = _apply_overrides(config, args)
    if not config.dataset:
        raise UsageError("no dataset given (config key 'dataset' or --dataset)")
    res = train(config, args.out, resume=args.resume,
                log_fn=lambda r: print(json.dumps(r), flush=True))
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def cmd_finetune(args):
    from .trainer import finetune, load_scenes

    scene = load_scenes(args.scene)[0]
    res = finetune(args.ckpt, scene, args.out, args.steps, input_views=args.views, lr=args.lr,
                   seed=args.seed, log_fn=lambda r: print(json.dumps(r), flush=True))
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def _gray(x, lo=None, hi=None):
    x = np.asarray(x, dtype=np.float64)
    lo = x.min() if lo is None else lo
    hi = x.max() if hi is None else hi
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def _save_png(path, image):
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image)
    Image.fromarray(arr if arr.ndim == 3 else arr, mode="RGB" if arr.ndim == 3 else "L").save(path)


def render_targets(checkpoint, scene, input_views, targets, out_dir, baseline_timing=True):
    """Render ``targets`` (view indices or ``("ring", n)``) and write PNGs under ``out_dir``.

    Files: ``rgb/<name>.png``, ``coarse/<name>.png``, ``depth/<name>.png`` and
    ``opacity/<name>.png`` with ``name`` = ``view_XXX`` or ``ring_XXX``. Returns the
    timing report that is also written to ``timing.json``.
    """
    from .trainer import PRECISIONS, load_model

    config, model = load_model(checkpoint)
    out_dir = Path(out_dir)
    inputs = [(scene.views[i].image_float, scene.views[i].camera) for i in input_views]
    if isinstance(targets, tuple) and targets[0] == "ring":
        ref = scene.views[0].camera
        cams = camera_ring(targets[1], radius=float(np.linalg.norm(ref.T)), size=scene.height)
        named = [(f"ring_{i:03d}", c) for i, c in enumerate(cams)]
    else:
        named = [(f"view_{i:03d}", scene.views[i].camera) for i in targets]
    n_samples = config.n_coarse + config.n_fine
    baseline = VolumetricBaseline(model.config.encoder.feature_dim, np.random.default_rng(0))
    report = {"targets": [], "n_coarse": config.n_coarse, "n_fine": config.n_fine}
    with dc.no_grad(), dc.precision(PRECISIONS[config.precision]):
        for name, cam in named:
            before = model.head.evaluations
            t0 = time.perf_counter()
            vols = [model.encoder(np.ascontiguousarray(img.transpose(2, 0, 1)), relative_pose(c, cam))
                    for img, c in inputs]
            out = render_image(model, inputs, cam, volumes=vols)
            wall = time.perf_counter() - t0
            row = {"name": name, "wall_seconds": wall,
                   "head_evaluations": model.head.evaluations - before}
            _save_png(out_dir / "rgb" / f"{name}.png", np.clip(out.image.data, 0, 1))
            _save_png(out_dir / "coarse" / f"{name}.png",
                      np.clip(out.coarse_rgb.data.transpose(1, 2, 0), 0, 1))
            _save_png(out_dir / "depth" / f"{name}.png", _gray(out.depth.data, cam.z_near, cam.z_far))
            _save_png(out_dir / "opacity" / f"{name}.png", np.clip(out.opacity.data, 0, 1))
            if baseline_timing:
                st = time_decode_stages(model, baseline, vols, inputs, cam, n_samples)
                row.update(baseline_evaluations=st.baseline_evaluations,
                           head_stage_seconds=st.head_seconds,
                           baseline_stage_seconds=st.baseline_seconds,
                           evaluation_ratio=st.ratio, speedup=st.speedup)
            report["targets"].append(row)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "timing.json").write_text(json.dumps(report, indent=1), encoding="utf-8")
    return report


def _parse_targets(text):
    if text.startswith("ring:"):
        try:
            return ("ring", int(text[5:]))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad ring spec {text!r}") from None
    return _int_list(text)


def cmd_render(args):
    from .trainer import load_scenes

    scene = load_scenes(args.scene)[0]
    report = render_targets(args.ckpt, scene, args.views, args.targets, args.out,
                            baseline_timing=not args.no_baseline)
    for row in report["targets"]:
        line = f"{row['name']}: {row['wall_seconds']:.3f} s, head evaluations {row['head_evaluations']}"
        if "baseline_evaluations" in row:
            line += (f", baseline evaluations {row['baseline_evaluations']}"
                     f" (x{row['evaluation_ratio']:g}), head-stage speedup {row['speedup']:.1f}x")
        print(line)
    return EXIT_OK


def cmd_eval(args):
    from .trainer import evaluate, load_model, load_scenes, model_renderer

    config, model = load_model(args.ckpt)
    scenes = load_scenes(args.data)
    report = evaluate(model_renderer(model, config.precision), scenes, split=args.split,
                      input_views=config.input_views)
    table = report.table()
    print(table)
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json(), encoding="utf-8")
        path.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import gradcheck

    report = gradcheck(args.component or None, seed=args.seed)
    print(report.table())
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def build_parser():
    p = _Parser(prog="lfnet", description="Few-shot light-field rendering toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a procedural multi-view dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, default=1)
    g.add_argument("--views", type=int, default=8)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--elevation", type=float, default=20.0)
    g.add_argument("--input-views", type=_int_list, default=None,
                   help="mark these views as train, the rest as test")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from scratch or resume")
    t.add_argument("--config", help="TOML config file")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to resume from")
    _train_overrides(t)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("finetune", help="finetune a checkpoint on one scene's input views")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--scene", required=True)
    f.add_argument("--views", type=_int_list, default=None)
    f.add_argument("--steps", type=int, default=1000)
    f.add_argument("--lr", type=float, default=1e-5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_finetune)

    r = sub.add_parser("render", help="render target views to PNG")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scene", required=True)
    r.add_argument("--views", type=_int_list, required=True, help="input view indices")
    r.add_argument("--targets", type=_parse_targets, required=True,
                   help="target view indices, or ring:N for N cameras on a ring")
    r.add_argument("--no-baseline", action="store_true", help="skip the volumetric timing baseline")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--report", help="write the JSON report here (and a .txt table beside it)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--component", action="append", help="restrict to this component (repeatable)")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    from .trainer import ConfigError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FloatingPointError as exc:  # divergence and non-finite activations
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DatasetError, CheckpointError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
