"""Pinhole camera math: rays, depth sampling, frustum NDC and Plücker coordinates.

Conventions
-----------
* ``R`` maps camera axes to world axes (world-from-camera), ``T`` is the camera
  centre in world units. Camera frame: +x right, +y down, +z forward.
* Pixel ``(u, v)`` is 1-based with ``u`` the row and ``v`` the column; its centre
  sits at continuous image coordinates ``(x, y) = (v - 0.5, u - 0.5)``.
* Frustum NDC maps continuous image coordinates ``[0, W] x [0, H]`` to
  ``[-1, 1]^2`` and depth ``[z_near, z_far]`` to ``[-1, 1]`` linearly in ``1/z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, concat, cos, mul, sin

PE_FREQUENCIES = 6
PLUCKER_DIM = 6
ENCODED_DIM = PLUCKER_DIM * (1 + 2 * PE_FREQUENCIES)


class InvalidCamera(ValueError):
    pass


class InvalidRay(ValueError):
    pass


class EmptySampling(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    z_near: float
    z_far: float
    height: int
    width: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "z_near", float(self.z_near))
        object.__setattr__(self, "z_far", float(self.z_far))
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise InvalidCamera("camera parameters must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidCamera(f"R is not a proper rotation (det={np.linalg.det(R):.6g})")
        if K[2, 2] != 1.0:
            raise InvalidCamera(f"K[2][2] must be 1, got {K[2, 2]}")
        if abs(np.linalg.det(K)) < 1e-12:
            raise InvalidCamera("K is singular")
        if not 0 < self.z_near < self.z_far:
            raise InvalidCamera(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")
        if int(self.height) < 1 or int(self.width) < 1:
            raise InvalidCamera(f"image size must be positive, got {self.height}x{self.width}")

    @property
    def K_inv(self):
        return np.linalg.inv(self.K)

    def scaled(self, factor):
        """Same pose and bounds, image resampled by ``factor`` (e.g. 1/4 for the feature grid)."""
        K = self.K.copy()
        K[:2] *= factor
        h = int(round(self.height * factor))
        w = int(round(self.width * factor))
        return Camera(K, self.R, self.T, self.z_near, self.z_far, h, w)


@dataclass(frozen=True)
class RaySample:
    origin: np.ndarray
    direction: np.ndarray
    depths: np.ndarray
    points: np.ndarray

    @property
    def deltas(self):
        return np.diff(self.depths)


@dataclass(frozen=True)
class PluckerRay:
    coords: np.ndarray
    encoded: np.ndarray


def ray_direction(cam, u, v, pixel_offset=0.5):
    """Unit world-space direction of the ray through pixel ``(u, v)``."""
    pix = np.array([v - pixel_offset, u - pixel_offset, 1.0])
    d = cam.R @ (cam.K_inv @ pix)
    return d / np.linalg.norm(d)


def ray_grid(cam, pixel_offset=0.5):
    """Origins and unit directions for every pixel, each of shape (H, W, 3)."""
    u, v = np.meshgrid(np.arange(1, cam.height + 1), np.arange(1, cam.width + 1), indexing="ij")
    pix = np.stack([v - pixel_offset, u - pixel_offset, np.ones_like(u, dtype=float)], axis=-1)
    d = pix @ (cam.R @ cam.K_inv).T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.T, d.shape).copy()
    return origins, d


def stratified_depths(z_near, z_far, n, rng=None, batch=None):
    """One uniform draw inside each of ``n`` equal bins of ``[z_near, z_far]``.

    ``rng=None`` places every sample at its bin midpoint. ``batch`` draws an
    independent set per ray and returns shape (batch, n).
    """
    if n < 1:
        raise EmptySampling("need at least one depth sample")
    if not 0 < z_near < z_far:
        raise ValueError(f"need 0 < z_near < z_far, got {z_near}, {z_far}")
    shape = (n,) if batch is None else (batch, n)
    if rng is None:
        jitter = np.full(shape, 0.5)
    else:
        jitter = rng.random(shape)
    width = (z_far - z_near) / n
    return z_near + (np.arange(n) + jitter) * width


def bin_edges(depths, z_near, z_far):
    """Bin boundaries around each sample: midpoints between neighbours, closed by the bounds."""
    depths = np.atleast_2d(depths)
    mids = 0.5 * (depths[:, 1:] + depths[:, :-1])
    lo = np.full((depths.shape[0], 1), z_near)
    hi = np.full((depths.shape[0], 1), z_far)
    return np.concatenate([lo, mids, hi], axis=1)


def importance_depths(coarse_depths, coarse_weights, n_fine, rng, z_near, z_far):
    """Draw ``n_fine`` depths per ray by inverse-CDF sampling of the coarse weights.

    Each coarse sample owns the interval between the midpoints to its neighbours;
    the density is piecewise constant with mass proportional to the weight. Rays
    whose weights are all zero fall back to equal mass per bin. Returns sorted
    depths of shape (rays, n_fine) (or (n_fine,) for 1-D input).
    """
    squeeze = np.ndim(coarse_depths) == 1
    depths = np.atleast_2d(np.asarray(coarse_depths, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(coarse_weights, dtype=np.float64))
    if depths.shape != weights.shape:
        raise ValueError(f"depths {depths.shape} and weights {weights.shape} differ")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    rays, n = depths.shape
    if n_fine == 0:
        out = np.zeros((rays, 0))
        return out[0] if squeeze else out
    edges = bin_edges(depths, z_near, z_far)
    total = weights.sum(axis=1, keepdims=True)
    empty = total[:, 0] <= 0
    pdf = np.where(empty[:, None], 1.0 / n, weights / np.where(total > 0, total, 1.0))
    cdf = np.concatenate([np.zeros((rays, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    u = np.sort(rng.random((rays, n_fine)), axis=1)
    # first bin whose upper cdf exceeds u; zero-mass bins are never selected
    k = np.empty((rays, n_fine), dtype=np.int64)
    for r in range(rays):
        k[r] = np.searchsorted(cdf[r, 1:], u[r], side="right")
    k = np.minimum(k, n - 1)
    rows = np.arange(rays)[:, None]
    c0 = cdf[rows, k]
    mass = pdf[rows, k]
    frac = np.where(mass > 0, (u - c0) / np.where(mass > 0, mass, 1.0), 0.5)
    frac = np.clip(frac, 0.0, 1.0)
    lo = edges[rows, k]
    hi = edges[rows, k + 1]
    out = lo + frac * (hi - lo)
    return out[0] if squeeze else out


def sample_ray(cam, u, v, depths):
    d = ray_direction(cam, u, v)
    depths = np.asarray(depths, dtype=np.float64)
    return RaySample(cam.T.copy(), d, depths, cam.T + depths[:, None] * d)


def world_to_camera(points, cam):
    return (np.asarray(points, dtype=np.float64) - cam.T) @ cam.R


def world_to_input_ndc(points, cam):
    """Map world points (M, 3) into ``cam``'s frustum NDC.

    Returns ``(ndc, in_front)`` where ``in_front`` flags positive camera depth;
    entries for points behind the camera are filled with a value outside the cube.
    """
    pts = np.atleast_2d(points)
    pc = world_to_camera(pts, cam)
    z = pc[:, 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    x = cam.K[0, 0] * pc[:, 0] / safe_z + cam.K[0, 1] * pc[:, 1] / safe_z + cam.K[0, 2]
    y = cam.K[1, 1] * pc[:, 1] / safe_z + cam.K[1, 2]
    inv_n, inv_f = 1.0 / cam.z_near, 1.0 / cam.z_far
    ndc = np.stack(
        [
            2.0 * x / cam.width - 1.0,
            2.0 * y / cam.height - 1.0,
            2.0 * (inv_n - 1.0 / safe_z) / (inv_n - inv_f) - 1.0,
        ],
        axis=1,
    )
    ndc[~in_front] = 2.0
    if np.ndim(points) == 1:
        return ndc[0], bool(in_front[0])
    return ndc, in_front


def input_ndc_to_world(ndc, cam):
    """Inverse of :func:`world_to_input_ndc` for points in front of the camera."""
    ndc = np.atleast_2d(ndc)
    inv_n, inv_f = 1.0 / cam.z_near, 1.0 / cam.z_far
    inv_z = inv_n - (ndc[:, 2] + 1.0) / 2.0 * (inv_n - inv_f)
    z = 1.0 / inv_z
    x = (ndc[:, 0] + 1.0) * cam.width / 2.0
    y = (ndc[:, 1] + 1.0) * cam.height / 2.0
    pix = np.stack([x, y, np.ones_like(x)], axis=1)
    pc = (pix @ cam.K_inv.T) * z[:, None]
    world = pc @ cam.R.T + cam.T
    return world[0] if np.ndim(ndc) == 1 else world


def plucker_coords(origins, directions):
    """(M, 6) Plücker coordinates ``(d, o x d) / |d|`` of oriented lines."""
    o = np.atleast_2d(origins).astype(np.float64)
    d = np.atleast_2d(directions).astype(np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidRay("ray direction must be non-zero")
    d = d / norm
    return np.concatenate([d, np.cross(o, d)], axis=-1)


def positional_encode(r, n_freqs=PE_FREQUENCIES):
    """``[r, sin(2^0 pi r), cos(2^0 pi r), ..., sin(2^(L-1) pi r), cos(2^(L-1) pi r)]`` on the last axis.

    Accepts numpy arrays or diffcore tensors (the latter stays differentiable).
    """
    if isinstance(r, Tensor):
        parts = [r]
        for k in range(n_freqs):
            scaled = mul(r, (2.0**k) * np.pi)
            parts += [sin(scaled), cos(scaled)]
        return concat(parts, axis=-1)
    r = np.asarray(r, dtype=np.float64)
    parts = [r]
    for k in range(n_freqs):
        scaled = (2.0**k) * np.pi * r
        parts += [np.sin(scaled), np.cos(scaled)]
    return np.concatenate(parts, axis=-1)


def plucker_encode(origin, direction):
    coords = plucker_coords(origin, direction)[0]
    return PluckerRay(coords, positional_encode(coords))
