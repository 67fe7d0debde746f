import numpy as np
import pytest

from lfnet import diffcore as dc
from lfnet.encoder import (
    Encoder, EncoderConfig, EncoderConfigError, NumericError, compose_relative, relative_pose,
)
from lfnet.geometry import Camera
from lfnet.scenes import camera_ring, look_at_rotation
from lfnet.trainer import MICRO_ENCODER


def test_paper_config_output_shape_64():
    enc = Encoder(EncoderConfig(), np.random.default_rng(0))
    with dc.no_grad():
        vol = enc(np.random.default_rng(1).random((3, 64, 64)), np.zeros(12))
    assert vol.shape == (32, 32, 16, 16)
    assert np.all(np.isfinite(vol.data.data))


@pytest.mark.slow
def test_paper_config_output_shape_128():
    enc = Encoder(EncoderConfig(), np.random.default_rng(0))
    with dc.no_grad():
        vol = enc(np.random.default_rng(1).random((3, 128, 128)), np.zeros(12))
    assert vol.shape == (32, 32, 32, 32)


def test_encoding_deterministic():
    enc = Encoder(EncoderConfig(**MICRO_ENCODER), np.random.default_rng(0))
    img = np.random.default_rng(1).random((3, 32, 32))
    pose = np.random.default_rng(2).standard_normal(12)
    with dc.no_grad():
        a = enc(img, pose).data.data
        b = enc(img, pose).data.data
    assert a.tobytes() == b.tobytes()


def test_shape_for_non_square_input():
    cfg = EncoderConfig(**MICRO_ENCODER)
    enc = Encoder(cfg, np.random.default_rng(0))
    with dc.no_grad():
        vol = enc(np.zeros((3, 16, 24)), np.zeros(12))
    assert vol.shape == (cfg.channels, cfg.depth, 4, 6)


def test_config_errors():
    with pytest.raises(EncoderConfigError):
        EncoderConfig(channels=4)
    with pytest.raises(EncoderConfigError):
        EncoderConfig(depth=3)
    enc = Encoder(EncoderConfig(**MICRO_ENCODER), np.random.default_rng(0))
    with pytest.raises(EncoderConfigError):
        enc(np.zeros((3, 20, 20)), np.zeros(12))
    with pytest.raises(NumericError):
        enc(np.zeros((3, 16, 16)), np.full(12, np.nan))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_reach_every_parameter(seed):
    rng = np.random.default_rng(seed)
    enc = Encoder(EncoderConfig(**MICRO_ENCODER), rng)
    vol = enc(rng.random((3, 16, 16)), rng.standard_normal(12))
    w = rng.standard_normal(vol.shape)
    dc.sum(vol.data * w).backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


def _cam(pos):
    K = np.array([[50.0, 0, 16], [0, 50.0, 16], [0, 0, 1]])
    return Camera(K, look_at_rotation(pos, np.zeros(3)), pos, 1, 4, 32, 32)


def test_relative_pose_identity_and_translation():
    a = _cam(np.array([0.0, 0.0, -2.0]))
    rel = relative_pose(a, a)
    assert np.allclose(rel[:9], np.eye(3).ravel()) and np.allclose(rel[9:], 0)
    b = Camera(a.K, a.R, a.T + a.R[:, 0], 1, 4, 32, 32)
    assert np.allclose(relative_pose(a, b)[9:], [1, 0, 0])


def test_relative_pose_composition():
    a, b, c = camera_ring(3, elevation=25.0, size=32)
    composed = compose_relative(relative_pose(a, b), relative_pose(b, c))
    assert np.max(np.abs(composed - relative_pose(a, c))) <= 1e-9
