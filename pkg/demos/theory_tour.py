"""Theory tour: value bounds, the gating threshold, the update decomposition
and an empirical contraction certificate.

Run:  python demos/theory_tour.py
"""
import numpy as np

from rvf.theory import (ContractionConfig, certify_random_mrps, decompose_update, min_gating_threshold,
                        min_threshold_for_rewards, value_gap_condition, value_bounds)

cfg = ContractionConfig(gamma=0.5, d=0.8, c=0.35, r_min=0.8, r_max_tilde=1.0)
v_min, v_max = value_bounds(cfg)
print(f"value box for gamma=0.5, D=0.8: [{v_min:.6f}, {v_max:.6f}]")
print(f"smallest gating threshold C: {min_gating_threshold(0.5, 0.8):.6f}")
# The value-gap condition also depends on the reward spread, and is much
# stricter than the gamma/D threshold when rewards span all of [0.8, 1].
ok, slack = value_gap_condition(cfg)
print(f"value-gap condition at C=0.35: {ok} (slack {slack:.4f}); "
      f"needs C >= {min_threshold_for_rewards(cfg):.4f}")

# How much of a step is carried by a past state: emphasis 0.9, then 0.1, 0.1.
rep = decompose_update([0.9, 0.1, 0.1], [1.0, 2.0, 3.0], 2)
print(f"\ncredit kept by s_2 after two low-emphasis steps: {rep.c_t:.4f}")
print(f"V^beta = {rep.v_beta:.4f} = V(s_2) - Delta = 2 - {rep.delta:.4f}")
print("weights of the other path states (s_2 removed):", np.round(rep.weights, 4))

# Sampled certificate on random chains (small sizes keep this quick).
reports = certify_random_mrps(cfg, n_mrps=5, n_pairs=10, n_samples=2000)
for k, r in enumerate(reports):
    print(f"chain {k}: max ratio {r.max_ratio:.3f} (bound {r.bound}, slack {r.slack:.3f}) "
          f"{'certified' if r.passed else 'FAILED'}")
