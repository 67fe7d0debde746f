"""
Generalizing to unseen scenes
=============================

Train on 20 procedural scenes with two input views each, then render the held-out
views of 5 new scenes. The reference point is copying whichever input view has
the closest camera. Finally each test scene is finetuned on its two input views.

Takes about an hour and a half on one CPU core with the defaults. With only 20
training scenes the model fits those scenes well but transfers poorly: expect it to
land near the copy baseline on unseen scenes, with finetuning adding about a dB.

Usage: python 05_generalization.py [train_steps] [finetune_steps]
"""

# %%
import sys
import tempfile

from lfnet.experiments import generalization_experiment

train_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
finetune_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 200
workdir = tempfile.mkdtemp()


def show(rec):
    print(f"step {rec['step']:6d}  total {rec['total']:.5f}")


g = generalization_experiment(workdir, train_steps=train_steps, finetune_steps=finetune_steps, log_fn=show)

# %%
print(f"{'scene':<12}{'copy':>8}{'model':>8}{'tuned':>8}")
for sid, row in g.per_scene.items():
    print(f"{sid:<12}{row['baseline']:8.2f}{row['model']:8.2f}{row['finetuned']:8.2f}")
print(f"{'mean':<12}{g.baseline_psnr:8.2f}{g.model_psnr:8.2f}{g.finetuned_psnr:8.2f}")
print(f"{g.seconds / 60:.1f} min")
