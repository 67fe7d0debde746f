"""
Compositing and gradient checks
===============================

Alpha compositing on a handful of rays, then the finite-difference harness that
guards every backward rule.
"""

# %%
import numpy as np

from lfnet import diffcore as dc
from lfnet.diffcore import Tensor
from lfnet.geometry import stratified_depths
from lfnet.gradcheck import gradcheck
from lfnet.renderer import composite

rng = np.random.default_rng(0)
n = 16
# channel 0 is the density logit, the rest are features to composite
vol = rng.standard_normal((4, n, 2, 2)) * 2
depths = stratified_depths(1.0, 3.0, n, rng, batch=4)
with dc.precision(np.float64):
    out = composite(Tensor(vol), depths, 1.0, 3.0)
print("opacity\n", out.opacity.data.round(3))
print("depth\n", out.depth.data.round(3))

# %%
# A wall of density at one sample: the ray stops there.
wall = np.full((2, n, 1, 1), -20.0)
wall[0, 5] = 20.0
wall[1] = np.arange(n)[:, None, None]
with dc.precision(np.float64):
    hit = composite(Tensor(wall), depths[:1], 1.0, 3.0)
print(hit.features.data.ravel(), depths[0, 5].round(4), hit.depth.data.ravel().round(4))

# %%
# Every differentiable primitive, plus the whole pipeline on an 8x8 micro model.
report = gradcheck(seed=0)
print(report.table())
print("passed:", report.passed)
