"""Y-chain walkthrough: why aliased states break TD and how emphasis fixes it.

Two branches share the observation for their penultimate state, but one branch
pays +1 at the end and the other pays -1. A tabular TD learner can only store one
number for the shared observation, so it settles near the average, zero. A recurrent
value function can learn to lean on the (unaliased) history instead.

Run:  python demos/ychain_aliasing.py
"""
import numpy as np

from rvf.experiments import YChainTask, run_ychain
from rvf.harness import run_experiment, ychain_spec

task = YChainTask(branch_len=3, stem_len=3, gamma=0.9)
print("exact values of the two aliased states:", task.targets)
print("oracle emphasis (1 on stem/branch heads, 0 elsewhere):", task.oracle_beta())

# One seed, a few hundred episodes, to watch the aliased-state error move.
rng = np.random.default_rng(0)
params = {"lr_theta": 0.5, "lr_omega": 1.0, "lam": 0.9}
curve = run_ychain("rtd", params, task, episodes=500, rng=rng, checkpoint_every=100)
for ep, err in zip(curve.checkpoints, curve.values):
    print(f"RTD(0) after {ep:4d} episodes: aliased error {err:.4f}")

# The full comparison over several seeds, as the CLI would run it.
res = run_experiment(ychain_spec(n_seeds=5, episodes=1000, checkpoint_every=100))
print("\nfinal mean aliased-state error over 5 seeds:")
for name, agg in res.methods.items():
    print(f"  {name:8s} {agg.mean[-1]:.4f} ± {agg.se[-1]:.4f}")
