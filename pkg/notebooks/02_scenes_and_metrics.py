"""
Procedural scenes and image metrics
===================================

Generate a scene of spheres and boxes, ray trace a ring of views, write a small
dataset to disk and score a few perturbed images with PSNR and SSIM.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from lfnet.metrics import psnr, ssim
from lfnet.scenes import camera_ring, generate_dataset, generate_scene, raytrace_gt
from lfnet.trainer import load_scenes

scene = generate_scene(7)
for p in scene.primitives:
    print(p.kind, np.round(p.center, 2), np.round(p.albedo, 2))

# %%
cams = camera_ring(8, size=64, elevation=20)
images = [raytrace_gt(scene, c) for c in cams]
print(images[0].shape, images[0].min(), images[0].max())

# %%
# Datasets are a manifest plus 8-bit PNGs per scene; views 0 and 4 become inputs here.
out = Path(tempfile.mkdtemp())
generate_dataset(out, seed=3, n_scenes=2, n_views=8, size=64, input_views=[0, 4], elevation=20)
scenes = load_scenes(out)
print([s.scene_id for s in scenes], [v.split for v in scenes[0].views])

# %%
# Metrics on [0, 1] images. Identical images give an infinite PSNR.
gt = images[0]
noisy = np.clip(gt + np.random.default_rng(0).normal(0, 0.05, gt.shape), 0, 1)
shifted = np.roll(gt, 2, axis=1)
print("identical", psnr(gt, gt), ssim(gt, gt))
print("noise    ", round(psnr(noisy, gt), 2), round(ssim(noisy, gt), 4))
print("shift    ", round(psnr(shifted, gt), 2), round(ssim(shifted, gt), 4))

# %%
# The nearest-input baseline used in the generalization experiment: copy the closest view.
print("neighbour copy", round(psnr(images[1], images[2]), 2))
