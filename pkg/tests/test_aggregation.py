import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfnet import diffcore as dc
from lfnet.aggregation import aggregate, resample_to_target, target_points, view_weights
from lfnet.diffcore import ContractError, Tensor
from lfnet.geometry import Camera, ray_grid, stratified_depths, world_to_input_ndc
from lfnet.scenes import camera_ring, look_at_rotation

from test_diffcore import trilinear_oracle


def test_identity_resample_recovers_slices():
    rng = np.random.default_rng(0)
    cam = camera_ring(1, size=32)[0]
    small = cam.scaled(0.25)
    c, d = 3, 8
    vol = rng.standard_normal((c, d, small.height, small.width))
    # depths at slice centres: NDC z = (2k + 1) / d - 1, linear in 1/z
    ndc_z = (2 * np.arange(d) + 1) / d - 1
    inv_n, inv_f = 1 / cam.z_near, 1 / cam.z_far
    z_plane = 1 / (inv_n - (ndc_z + 1) / 2 * (inv_n - inv_f))
    # resample along rays: convert planar depth to distance along each ray
    _, dirs = ray_grid(small)
    cos = (dirs.reshape(-1, 3) @ cam.R[:, 2])[:, None]
    depths = z_plane[None, :] / cos
    with dc.precision(np.float64):
        out = resample_to_target(vol, cam, small, depths).data
    assert np.max(np.abs(out - vol)) <= 1e-5


def test_behind_camera_reads_zero():
    cams = camera_ring(2, size=16)
    small = cams[1].scaled(0.25)
    vol = np.ones((3, 4, 4, 4))
    # a target at the input's centre looking straight away from it
    away = Camera(small.K, look_at_rotation(cams[0].T, cams[0].T * 2), cams[0].T, 0.1, 1.0, 4, 4)
    depths = stratified_depths(0.1, 1.0, 5, batch=16)
    out = resample_to_target(vol, cams[0], away, depths)
    assert np.all(out.data == 0)


def test_resample_vs_scalar_oracle():
    rng = np.random.default_rng(3)
    for trial in range(3):
        cams = camera_ring(5, size=32, elevation=float(rng.uniform(-30, 30)), azimuth_offset=float(rng.uniform(0, 360)))
        src, tgt = cams[0], cams[int(rng.integers(1, 5))]
        small = tgt.scaled(0.25)
        vol = rng.standard_normal((4, 6, 8, 8))
        depths = stratified_depths(tgt.z_near, tgt.z_far, 5, rng, batch=64)
        with dc.precision(np.float64):
            out = resample_to_target(vol, src, small, depths).data
        pts = target_points(small, depths)
        for r in rng.choice(64, 10, replace=False):
            for z in range(5):
                ndc, front = world_to_input_ndc(pts[r, z], src)
                ref = trilinear_oracle(vol, ndc) if front else np.zeros(4)
                got = out[:, z, r // 8, r % 8]
                assert np.max(np.abs(got - ref)) <= 1e-6


def test_single_view_identity_exact():
    v = Tensor(np.random.default_rng(0).standard_normal((5, 3, 2, 2)).astype(np.float32))
    out = aggregate([v]).data
    assert np.array_equal(out.data, v.data[1:])


def test_two_views_equal_confidence_mean():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 4, 2, 3, 3))
    a[0] = b[0] = 0.7
    with dc.precision(np.float64):
        out = aggregate([Tensor(a), Tensor(b)]).data.data
    assert np.allclose(out, (a[1:] + b[1:]) / 2, atol=1e-12)


def test_hand_softmax_weights():
    a = np.zeros((3, 1, 1, 1))
    b = np.zeros((3, 1, 1, 1))
    b[0] = np.log(3.0)
    a[1:], b[1:] = 1.0, 5.0
    with dc.precision(np.float64):
        out = aggregate([Tensor(a), Tensor(b)]).data.data
        w = view_weights([Tensor(a), Tensor(b)])
    assert np.allclose(w[:, 0, 0, 0], [0.25, 0.75])
    assert np.allclose(out, 0.25 * 1 + 0.75 * 5)


def test_empty_rejected():
    with pytest.raises(ContractError):
        aggregate([])


@given(st.integers(0, 1000), st.integers(2, 4))
def test_weights_sum_and_permutation(seed, k):
    rng = np.random.default_rng(seed)
    with dc.precision(np.float64):
        views = [Tensor(rng.standard_normal((4, 3, 2, 2)) * 5) for _ in range(k)]
        w = view_weights(views)
        perm = rng.permutation(k)
        a = aggregate(views).data.data
        b = aggregate([views[i] for i in perm]).data.data
    assert np.max(np.abs(w.sum(axis=0) - 1)) <= 1e-6
    assert np.max(np.abs(a - b)) <= 1e-6


def test_negligible_view_leaves_output():
    rng = np.random.default_rng(2)
    views = [Tensor(rng.standard_normal((4, 3, 2, 2))) for _ in range(2)]
    extra = rng.standard_normal((4, 3, 2, 2))
    extra[0] = -1e9
    a = aggregate(views).data.data
    b = aggregate(views + [Tensor(extra)]).data.data
    assert np.max(np.abs(a - b)) <= 1e-5


def test_gradients_reach_every_view():
    rng = np.random.default_rng(3)
    views = [Tensor(rng.standard_normal((4, 3, 2, 2)), requires_grad=True) for _ in range(3)]
    dc.sum(aggregate(views).data).backward()
    for v in views:
        assert np.any(v.grad[0] != 0) and np.any(v.grad[1:] != 0)
