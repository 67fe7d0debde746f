import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfnet import diffcore as dc
from lfnet.diffcore import ShapeError, Tensor
from lfnet.losses import (
    LossReport, downsample, loss_coarse_rgb, loss_depth_smooth, loss_fine, total_loss,
)


def test_fine_examples():
    rng = np.random.default_rng(0)
    a = rng.random((8, 8, 3))
    with dc.precision(np.float64):
        assert loss_fine(a, a).item() == 0
        assert np.isclose(loss_fine(a + 0.1, a).item(), 0.01)
        b = rng.random((8, 8, 3))
        ref = sum((a[i, j, c] - b[i, j, c]) ** 2 for i in range(8) for j in range(8) for c in range(3)) / 192
        assert abs(loss_fine(a, b).item() - ref) <= 1e-9
    with pytest.raises(ShapeError):
        loss_fine(a, a[:4])


def test_coarse_examples():
    rng = np.random.default_rng(1)
    gt = rng.random((16, 16, 3))
    small = downsample(gt)
    with dc.precision(np.float64):
        assert loss_coarse_rgb(small.transpose(2, 0, 1), small).item() == 0
        const = downsample(np.full((16, 16, 3), 0.3))
        assert np.allclose(const, 0.3)
        assert loss_coarse_rgb(np.full((3, 4, 4), 0.3), const).item() < 1e-30
        pred = rng.random((3, 4, 4))
        ref = np.mean([(pred[c, i, j] - small[i, j, c]) ** 2 for c in range(3) for i in range(4) for j in range(4)])
        assert abs(loss_coarse_rgb(pred, small).item() - ref) <= 1e-9


def test_downsample_box_average():
    img = np.arange(16.0).reshape(4, 4, 1)
    assert np.allclose(downsample(img, 2)[..., 0], [[2.5, 4.5], [10.5, 12.5]])


def test_depth_smooth_examples():
    flat = np.full((2, 2, 3), 0.4)
    with dc.precision(np.float64):
        assert loss_depth_smooth(np.full((2, 2), 1.7), flat).item() == 0
        step = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert np.isclose(loss_depth_smooth(step, flat).item(), 0.5)
        edge = flat.copy()
        edge[1] += 10 / np.sqrt(3)  # |image difference| = 10 across the step
        assert np.isclose(loss_depth_smooth(step, edge).item(), 0.5 * np.exp(-10))


def test_depth_smooth_opacity_mask():
    step = np.array([[0.0, 0.0], [1.0, 1.0]])
    flat = np.zeros((2, 2, 3))
    with dc.precision(np.float64):
        masked = loss_depth_smooth(step, flat, opacity=np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert masked.item() == 0


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_depth_smooth_offset_invariance(seed, c):
    rng = np.random.default_rng(seed)
    d = rng.random((4, 5))
    gt = rng.random((4, 5, 3))
    with dc.precision(np.float64):
        a = loss_depth_smooth(d, gt).item()
        b = loss_depth_smooth(d + c, gt).item()
    assert a >= 0 and abs(a - b) <= 1e-12


class _Out:
    def __init__(self, image, coarse, depth, opacity):
        self.image, self.coarse_rgb, self.depth, self.opacity = image, coarse, depth, opacity


def test_total_is_exact_sum_and_zero_on_perfect():
    rng = np.random.default_rng(3)
    gt = rng.random((8, 8, 3))
    small = downsample(gt)
    perfect = _Out(Tensor(gt), Tensor(small.transpose(2, 0, 1)), Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
    _, rep = total_loss(perfect, gt)
    assert rep.fine == rep.coarse_rgb == rep.depth_smooth == rep.total == 0
    noisy = _Out(Tensor(rng.random((8, 8, 3))), Tensor(rng.random((3, 2, 2))),
                 Tensor(rng.random((2, 2))), Tensor(np.ones((2, 2))))
    loss, rep = total_loss(noisy, gt)
    assert rep.total == rep.fine + rep.coarse_rgb + rep.depth_smooth
    assert isinstance(rep, LossReport) and set(rep.as_dict()) == {"fine", "coarse_rgb", "depth_smooth", "total"}


def test_total_loss_gradient_vs_finite_differences():
    rng = np.random.default_rng(4)
    gt = rng.random((8, 8, 3))
    with dc.precision(np.float64):
        img = Tensor(rng.random((8, 8, 3)), requires_grad=True)
        coarse = Tensor(rng.random((3, 2, 2)), requires_grad=True)
        depth = Tensor(rng.random((2, 2)) + np.array([[0, 0.5], [1.0, 1.5]]), requires_grad=True)
        opacity = np.ones((2, 2))
        fn = lambda i, c, d: total_loss(_Out(i, c, d, opacity), gt)[0]
        errs = dc.check_gradients(fn, [img, coarse, depth], rng, eps=1e-6)
    assert max(errs.values()) <= 1e-3
