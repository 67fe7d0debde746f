import numpy as np
import pytest

from lfnet.metrics import gaussian_window, psnr, ssim


def test_identical_images():
    x = np.random.default_rng(0).random((16, 16, 3))
    assert psnr(x, x) == float("inf")
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_constant_offset_psnr():
    x = np.full((8, 8, 3), 0.3)
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)


def test_psnr_grows_as_error_shrinks():
    x = np.random.default_rng(1).random((8, 8, 3)) * 0.5
    vals = [psnr(x + e, x) for e in (1e-1, 1e-2, 1e-3)]
    assert vals[0] < vals[1] < vals[2]


def ssim_oracle(a, b):
    """Direct per-window evaluation of the SSIM formula."""
    g = gaussian_window()
    w = np.outer(g, g)
    c1, c2 = 0.01**2, 0.03**2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        vals = []
        for i in range(x.shape[0] - 10):
            for j in range(x.shape[1] - 10):
                px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
                mx, my = np.sum(w * px), np.sum(w * py)
                vx = np.sum(w * px * px) - mx**2
                vy = np.sum(w * py * py) - my**2
                cxy = np.sum(w * px * py) - mx * my
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
        scores.append(np.mean(vals))
    return np.mean(scores)


def test_ssim_vs_direct_oracle():
    rng = np.random.default_rng(2)
    a = rng.random((16, 14, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-6


def test_shape_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
