import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfnet.geometry import (
    ENCODED_DIM, Camera, EmptySampling, InvalidCamera, InvalidRay, importance_depths,
    input_ndc_to_world, plucker_coords, plucker_encode, positional_encode, ray_direction,
    ray_grid, sample_ray, stratified_depths, world_to_input_ndc,
)
from lfnet.scenes import camera_ring, look_at_rotation


def rot_y(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])


def cam(K=np.eye(3), R=np.eye(3), T=np.zeros(3), near=1.0, far=3.0, h=128, w=128):
    return Camera(K, R, T, near, far, h, w)


def test_principal_axis_direction():
    assert np.allclose(ray_direction(cam(), 0, 0, pixel_offset=0), [0, 0, 1])


def test_rotated_principal_axis():
    d = ray_direction(cam(R=rot_y(90)), 0, 0, pixel_offset=0)
    assert np.allclose(d, [1, 0, 0], atol=1e-12)


def test_principal_point_pixel():
    K = np.array([[100.0, 0, 64], [0, 100.0, 64], [0, 0, 1]])
    assert np.allclose(ray_direction(cam(K=K), 64, 64, pixel_offset=0), [0, 0, 1])
    # with centre offsets the central pixel pair straddles the axis symmetrically
    d1 = ray_direction(cam(K=K), 64, 64)
    d2 = ray_direction(cam(K=K), 65, 65)
    assert np.allclose(d1[:2], -d2[:2])


def test_ray_grid_matches_ray_direction():
    K = np.array([[50.0, 0, 16], [0, 60.0, 12], [0, 0, 1]])
    c = cam(K=K, R=rot_y(30), T=[0.1, 0.2, -2], h=24, w=32)
    origins, dirs = ray_grid(c)
    assert dirs.shape == (24, 32, 3)
    for u, v in [(1, 1), (24, 32), (7, 19)]:
        assert np.allclose(dirs[u - 1, v - 1], ray_direction(c, u, v), atol=1e-12)
    assert np.allclose(origins, c.T)


@pytest.mark.parametrize("bad", [
    dict(R=np.diag([1.0, 1.0, -1.0])),
    dict(R=np.eye(3) * 1.01),
    dict(K=np.diag([1.0, 1.0, 2.0])),
    dict(K=np.zeros((3, 3)) + np.diag([0.0, 0.0, 1.0])),
    dict(near=2.0, far=1.0),
    dict(near=0.0),
    dict(h=0),
])
def test_invalid_cameras_rejected(bad):
    with pytest.raises(InvalidCamera):
        cam(**bad)


def test_stratified_midpoints():
    assert np.allclose(stratified_depths(1, 2, 4), [1.125, 1.375, 1.625, 1.875])
    assert np.allclose(stratified_depths(1, 2, 1), [1.5])


def test_stratified_bins_independent_oracle():
    d = stratified_depths(2, 6, 8, np.random.default_rng(7))
    width = (6 - 2) / 8
    for z, t in enumerate(d, start=1):
        assert 2 + (z - 1) * width <= t <= 2 + z * width
    assert np.all(np.diff(d) > 0)


def test_stratified_reproducible_and_empty():
    a = stratified_depths(1, 5, 16, np.random.default_rng(3), batch=4)
    b = stratified_depths(1, 5, 16, np.random.default_rng(3), batch=4)
    assert a.tobytes() == b.tobytes()
    with pytest.raises(EmptySampling):
        stratified_depths(1, 2, 0)


def test_importance_one_hot_stays_in_bin():
    depths = stratified_depths(1, 3, 8)
    w = np.zeros(8)
    w[5] = 1.0
    fine = importance_depths(depths, w, 64, np.random.default_rng(0), 1, 3)
    lo, hi = 0.5 * (depths[4] + depths[5]), 0.5 * (depths[5] + depths[6])
    assert np.all((fine >= lo) & (fine <= hi))


def _chi_square_uniform(samples, edges):
    counts, _ = np.histogram(samples, bins=edges)
    expected = len(samples) * np.diff(edges) / (edges[-1] - edges[0])
    return np.sum((counts - expected) ** 2 / expected), counts, expected


@pytest.mark.parametrize("weights", ["uniform", "zero"])
def test_importance_uniform_occupancy(weights):
    depths = stratified_depths(1, 3, 8)
    w = np.ones(8) if weights == "uniform" else np.zeros(8)
    fine = importance_depths(depths, w, 10_000, np.random.default_rng(1), 1, 3)
    edges = np.linspace(1, 3, 9)
    # midpoint depths make every importance bin 0.25 wide, so both cases are uniform
    _, counts, expected = _chi_square_uniform(fine, edges)
    sigma = np.sqrt(expected)
    assert np.all(np.abs(counts - expected) <= 3 * sigma)


def test_sample_ray_points_exact():
    c = cam(R=rot_y(20), T=[0.5, 0, -2])
    rs = sample_ray(c, 3, 9, stratified_depths(1, 3, 5))
    assert np.isclose(np.linalg.norm(rs.direction), 1.0, atol=1e-12)
    assert np.array_equal(rs.points, rs.origin + rs.depths[:, None] * rs.direction)


def _ring_cam():
    K = np.array([[80.0, 0, 32], [0, 80.0, 32], [0, 0, 1]])
    pos = np.array([0.4, 0.3, -2.0])
    return Camera(K, look_at_rotation(pos, np.zeros(3)), pos, 1.2, 3.0, 64, 64)


def test_ndc_near_far_on_axis():
    c = _ring_cam()
    axis = c.R[:, 2]
    near, _ = world_to_input_ndc(c.T + c.z_near * axis, c)
    far, _ = world_to_input_ndc(c.T + c.z_far * axis, c)
    assert np.isclose(near[2], -1.0) and np.isclose(far[2], 1.0)
    assert np.allclose(near[:2], 0.0, atol=1e-12) and np.allclose(far[:2], 0.0, atol=1e-12)


def test_ndc_behind_camera_flagged():
    c = _ring_cam()
    ndc, front = world_to_input_ndc(c.T - c.R[:, 2], c)
    assert not front and np.all(np.abs(ndc) > 1)


def test_ndc_round_trip():
    c = _ring_cam()
    ndc = np.random.default_rng(0).uniform(-1, 1, size=(500, 3))
    world = input_ndc_to_world(ndc, c)
    back, front = world_to_input_ndc(world, c)
    assert front.all()
    assert np.max(np.abs(back - ndc)) <= 1e-9


def test_plucker_examples():
    assert np.allclose(plucker_encode([0, 0, 0], [0, 0, 1]).coords, [0, 0, 1, 0, 0, 0])
    a = plucker_encode([1, 0, 0], [0, 0, 1]).coords
    assert np.allclose(a, [0, 0, 1, 0, -1, 0])
    b = plucker_encode([1, 0, 5], [0, 0, 1]).coords
    assert np.array_equal(a, b)
    with pytest.raises(InvalidRay):
        plucker_encode([0, 0, 0], [0, 0, 0])


vec = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)


@given(vec, vec, st.floats(-5, 5), st.floats(0.1, 10))
def test_plucker_invariances(o, d, lam, s):
    if np.linalg.norm(d) < 1e-3:
        d = d + np.array([0.0, 0.0, 1.0])
    base = plucker_coords(o, d)[0]
    unit = d / np.linalg.norm(d)
    assert np.max(np.abs(plucker_coords(o + lam * unit, d)[0] - base)) <= 1e-12
    assert np.max(np.abs(plucker_coords(o, s * d)[0] - base)) <= 1e-12
    assert np.isclose(np.linalg.norm(base[:3]), 1.0, atol=1e-12)
    assert abs(base[:3] @ base[3:]) <= 1e-9
    assert plucker_encode(o, d).encoded.shape == (ENCODED_DIM,)


def test_positional_encoding_layout():
    z = positional_encode(np.zeros(6))
    assert z.shape == (78,)
    assert np.all(z[:6] == 0)
    blocks = z[6:].reshape(6, 2, 6)
    assert np.all(blocks[:, 0] == 0) and np.all(blocks[:, 1] == 1)
    r = np.zeros(6)
    r[0] = 0.5
    assert np.isclose(positional_encode(r)[6], 1.0)


def test_camera_ring_geometry():
    cams = camera_ring(4, elevation=0.0)
    pos = np.array([c.T for c in cams])
    az = np.degrees(np.arctan2(pos[:, 0], -pos[:, 2])) % 360
    assert np.allclose(az, [0, 90, 180, 270])
