"""
Cameras, rays and Plücker coordinates
=====================================

A walk through the geometry used everywhere else: pixel rays, depth samples,
the frustum NDC cube and the ray parametrization fed to the light-field head.
"""

# %%
import numpy as np

from lfnet.geometry import (
    plucker_coords, positional_encode, ray_grid, stratified_depths, world_to_input_ndc,
)
from lfnet.scenes import camera_ring

cams = camera_ring(8, size=32, elevation=20)
cam = cams[0]
print("K =\n", cam.K)
print("camera centre", cam.T, "depth range", cam.z_near, cam.z_far)

# %%
# One ray per pixel centre. Directions are unit length, origins are the camera centre.
origins, dirs = ray_grid(cam)
print(origins.shape, dirs.shape, np.linalg.norm(dirs.reshape(-1, 3), axis=1).round(6)[:4])

# %%
# Stratified depths: one uniform draw per bin, sorted by construction.
rng = np.random.default_rng(0)
t = stratified_depths(cam.z_near, cam.z_far, 8, rng, batch=3)
print(t.round(3))

# %%
# Pixel (16, 16) sits half a pixel off the optical axis, so its NDC x and y are small but
# not zero. Near maps to -1 and far to +1.
centre = dirs[16, 16]
pts = cam.T + np.array([cam.z_near, cam.z_far])[:, None] * centre
ndc, front = world_to_input_ndc(pts, cam)
print(ndc.round(3), front)

# %%
# Plücker coordinates do not care where on the line the origin sits, or how long d is.
o, d = np.array([0.3, -0.2, 1.0]), np.array([0.0, 1.0, 2.0])
a = plucker_coords(o, d)
b = plucker_coords(o + 4.0 * d / np.linalg.norm(d), 7.0 * d)
print(a.round(4), np.abs(a - b).max())

# %%
# The head sees a positional encoding of those six numbers.
enc = positional_encode(a)
print(enc.shape)
