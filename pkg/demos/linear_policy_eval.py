"""Linear policy evaluation with partially informative features.

Each state's feature vector mixes an informative block with noise. The demo
compares TD(0), TD(lambda) and a linear recurrent value function on one shared
stream of transitions per replicate and reports the final RMSVE.

Run:  python demos/linear_policy_eval.py
"""
from scipy import stats

from rvf.linear import LinearMethod, build_feature_mrp, compare_linear_methods
from rvf.mrp import exact_values

mrp, feats = build_feature_mrp()
oracle = exact_values(mrp)
methods = [LinearMethod("td0"), LinearMethod("td_lambda"), LinearMethod("rvf")]
comp = compare_linear_methods(methods, mrp, feats, oracle, n_replicates=10, n_transitions=5000,
                              checkpoint_every=1000)
for m in methods:
    curve = comp.curves[m.name].mean(axis=0)
    print(f"{m.name:8s} RMSVE by checkpoint:", " ".join(f"{x:.3f}" for x in curve))
p = stats.ttest_rel(comp.final("RVF"), comp.final("TD(0)"), alternative="less").pvalue
print(f"\npaired one-sided p (RVF < TD(0)) over 10 replicates: {p:.2e}")
