import json

import numpy as np
import pytest
from PIL import Image

from lfnet import cli
from lfnet.cli import EXIT_GRADCHECK, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--seed", "2", "--scenes", "2", "--views", "4", "--size", "16",
                 "--input-views", "0,1,2", "--out", str(data)]) == EXIT_OK
    cfg = root / "train.toml"
    cfg.write_text(
        "[train]\n"
        f'dataset = "{data.as_posix()}"\n'
        "image_size = 16\nn_coarse = 6\nn_fine = 3\nlr = 1e-3\nmax_steps = 3\n"
        'arch = "tiny"\ncheckpoint_every = 3\n'
    )
    run = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--seed", "4"]) == EXIT_OK
    return root, data, run / "checkpoint.lfn", cfg


def test_train_writes_checkpoint_and_override(workspace):
    from lfnet.checkpoint import load_checkpoint
    _, _, ckpt, _ = workspace
    ck = load_checkpoint(ckpt)
    assert ck.step == 3 and ck.config["seed"] == 4 and ck.config["arch"] == "tiny"


def test_resume_without_config_keeps_checkpoint_settings(workspace, tmp_path):
    from lfnet.checkpoint import load_checkpoint
    _, _, ckpt, _ = workspace
    out = tmp_path / "resumed"
    assert main(["train", "--resume", str(ckpt), "--max-steps", "5", "--out", str(out)]) == EXIT_OK
    ck = load_checkpoint(out / "checkpoint.lfn")
    assert ck.step == 5 and ck.config["arch"] == "tiny" and ck.config["seed"] == 4


def test_render_ring(workspace, tmp_path, capsys):
    _, data, ckpt, _ = workspace
    out = tmp_path / "ring"
    code = main(["render", "--ckpt", str(ckpt), "--scene", str(data / "scene_0000"),
                 "--views", "0,1", "--targets", "ring:8", "--out", str(out)])
    assert code == EXIT_OK
    files = sorted((out / "rgb").glob("*.png"))
    assert len(files) == 8
    assert np.asarray(Image.open(files[0])).shape == (16, 16, 3)
    for sub in ("coarse", "depth", "opacity"):
        assert len(list((out / sub).glob("*.png"))) == 8
    timing = json.loads((out / "timing.json").read_text())
    for row in timing["targets"]:
        assert row["head_evaluations"] == 16 * 16
        assert row["evaluation_ratio"] == 6 + 3
    assert "head evaluations 256" in capsys.readouterr().out


def test_render_128_counts_one_head_call_per_pixel(workspace, tmp_path):
    from lfnet.scenes import generate_dataset
    _, _, ckpt, _ = workspace
    big = tmp_path / "big"
    generate_dataset(big, seed=5, n_scenes=1, n_views=3, size=128)
    report = cli.render_targets(ckpt, cli_scene(big), [0, 1], [2], tmp_path / "out", baseline_timing=False)
    assert report["targets"][0]["head_evaluations"] == 128 * 128


def cli_scene(path):
    from lfnet.trainer import load_scenes
    return load_scenes(path)[0]


def test_eval_report(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    rep = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(rep)]) == EXIT_OK
    body = json.loads(rep.read_text())
    assert len(body["rows"]) == 2 and np.isfinite(body["mean_psnr"])
    assert "mean" in rep.with_suffix(".txt").read_text()


def test_finetune_cli(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    code = main(["finetune", "--ckpt", str(ckpt), "--scene", str(data / "scene_0001"),
                 "--views", "0,2", "--steps", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK and (tmp_path / "checkpoint.lfn").exists()
    assert main(["finetune", "--ckpt", str(ckpt), "--scene", str(data / "scene_0001"),
                 "--steps", "10001", "--out", str(tmp_path / "x")]) == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--out", "x"],  # no dataset
    ["train", "--config", "/nonexistent.toml", "--out", "x"],
    ["render", "--ckpt", "/nonexistent.lfn", "--scene", ".", "--views", "0", "--targets", "1", "--out", "x"],
    ["gradcheck", "--component", "nope"],
    ["bogus"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(main(argv))
    assert exc.value.code == EXIT_USAGE


def test_bad_toml_key(workspace, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("learning_rate = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE


def test_numeric_failure_exit(workspace, tmp_path, monkeypatch):
    from lfnet import trainer
    _, _, _, cfg = workspace

    def broken(out, gt):
        raise FloatingPointError("non-finite loss")

    monkeypatch.setattr(trainer, "total_loss", broken)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_gradcheck_exit_codes(monkeypatch, capsys):
    from lfnet import gradcheck as gc
    assert main(["gradcheck", "--component", "exp", "--component", "sum"]) == EXIT_OK
    assert "exp" in capsys.readouterr().out
    bad = dict(gc.PRIMITIVES)
    real = bad["exp"]

    def corrupt(rng):
        fn, inputs = real(rng)
        return (lambda a: fn(a) + _wrong_grad(a)), inputs

    bad["exp"] = corrupt
    monkeypatch.setattr(gc, "PRIMITIVES", bad)
    assert main(["gradcheck", "--component", "exp"]) == EXIT_GRADCHECK


def _wrong_grad(a):
    """Adds zero in the forward pass but a constant in the backward pass."""
    from lfnet.diffcore.tensor import make_node
    return make_node(np.zeros_like(a.data), (a,), lambda g: (g + 1.0,), "wrong")


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "lfnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen-data", "train", "finetune", "render", "eval", "gradcheck"):
        assert cmd in res.stdout
