"""
Overfitting a single scene
==========================

Train the micro model on one procedural scene seen from 8 ring views, using
views 0 and 4 as inputs. This takes several minutes on one CPU core.

Usage: python 04_overfit_one_scene.py [seed] [max_steps]
"""

# %%
import sys
import tempfile

from lfnet.experiments import overfit_experiment

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
max_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
workdir = tempfile.mkdtemp()


def show(rec):
    if rec["step"] % 100 == 0:
        print(f"step {rec['step']:5d}  fine {rec['fine']:.5f}  total {rec['total']:.5f}")


result = overfit_experiment(seed, workdir, max_steps=max_steps, log_fn=show)

# %%
for step, value in result.history:
    print(f"after {step:5d} steps: {value:.2f} dB on the training views")
print(f"{result.seconds / 60:.1f} min, checkpoint in {workdir}/seed{seed}")
