import io

import numpy as np
import pytest

from rvf.core import RvfParams, rvf_estimates, start_episode, step_rvf
from rvf.linear import (FeatureMatrix, LinearMethod, LinearValueFn, build_feature_mrp, compare_linear_methods, rmsve,
                        run_linear_policy_eval, write_rmsve_csv)
from rvf.mrp import ObservationMap, exact_values, sample_trajectory, stationary_check


def test_feature_mrp_is_ergodic_and_deterministic():
    mrp, f = build_feature_mrp(20, 4, seed=3, noise_level=0.5)
    assert stationary_check(mrp).ergodic
    mrp2, f2 = build_feature_mrp(20, 4, seed=3, noise_level=0.5)
    assert np.array_equal(f.phi, f2.phi)
    assert np.array_equal(mrp.transition, mrp2.transition)
    assert f.phi.shape == (20, 4)


@pytest.mark.parametrize("k", [1, 3, 4, 8, 19, 20])
def test_informative_block_has_full_rank(k):
    _, f = build_feature_mrp(20, k, seed=0, noise_level=0.3)
    s = np.linalg.svd(f.informative, compute_uv=False)
    assert int(np.sum(s > 1e-8)) == min(k, 20)


def test_feature_checks():
    with pytest.raises(ValueError):
        build_feature_mrp(5, 6)
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[np.nan, 1.0]]))


def test_linear_prediction():
    _, f = build_feature_mrp(6, 3, seed=0)
    w = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(LinearValueFn(w).predict(f), f.phi @ w)
    assert LinearValueFn(w).predict(f, [2]) == pytest.approx(f.phi[2] @ w)


def test_rmsve_properties():
    assert rmsve([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmsve([1.0, 4.0], [1.0, 2.0]) == pytest.approx(np.sqrt(2.0))
    assert rmsve([1.0, 4.0, 9.0], [1.0, 2.0, 0.0], eval_states=[0]) == 0.0
    assert rmsve([0.0], [3.0]) > 0


def test_tabular_features_recover_exact_values():
    mrp, f = build_feature_mrp(8, 8, seed=1, noise_level=0.0, gamma=0.5)
    np.testing.assert_array_equal(f.phi, np.eye(8))
    v = exact_values(mrp)
    _, curve = run_linear_policy_eval(LinearMethod("td0", lr=0.01), mrp, f, 100_000, None, v,
                                      np.random.default_rng(1), checkpoint_every=20_000)
    # residual is step-size noise: about 1% of the value scale
    assert curve[-1] < 0.03 * np.abs(v).mean()
    assert curve[-1] < curve[0]


def test_unit_emphasis_rvf_equals_td0():
    mrp, f = build_feature_mrp(20, 4, seed=0)
    v = exact_values(mrp)
    a = run_linear_policy_eval(LinearMethod("td0"), mrp, f, 2000, None, v, np.random.default_rng(5))
    b = run_linear_policy_eval(LinearMethod("rvf", fixed_beta=1.0), mrp, f, 2000, None, v,
                               np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_default_rates():
    assert LinearMethod("td0").lr == 0.005
    assert LinearMethod("rvf").lr == 0.005 and LinearMethod("rvf").lr_beta == 0.005
    m = LinearMethod("td_lambda")
    assert m.lr == 0.0005 and m.lam == 0.9 and m.name == "TD(0.9)"


def test_linear_trace_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    _, f = build_feature_mrp(20, 4, seed=2)
    phis = f.phi[rng.integers(0, 20, 20)]
    params = RvfParams(rng.normal(size=4), rng.normal(size=4))
    state = start_episode(phis[0], params)
    for t in range(1, 20):
        state = step_rvf(state, phis[t], params)
    h = 1e-5
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        up = rvf_estimates(RvfParams(params.theta + e, params.omega), phis)[-1]
        dn = rvf_estimates(RvfParams(params.theta - e, params.omega), phis)[-1]
        fd = (up - dn) / (2 * h)
        assert abs(fd - state.e_theta[j]) <= 1e-6 * max(abs(fd), 1e-3)


def test_comparison_is_paired_and_csv_schema():
    mrp, f = build_feature_mrp(20, 4, seed=0)
    v = exact_values(mrp)
    methods = [LinearMethod("td0"), LinearMethod("rvf")]
    c = compare_linear_methods(methods, mrp, f, v, n_replicates=3, n_transitions=500, checkpoint_every=250)
    again = compare_linear_methods(methods, mrp, f, v, n_replicates=3, n_transitions=500, checkpoint_every=250)
    assert np.array_equal(c.final("RVF"), again.final("RVF"))
    assert c.curves["TD(0)"].shape == (3, 2)
    buf = io.StringIO()
    write_rmsve_csv(c, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "method,replicate,transition_count,rmsve"
    assert len(lines) == 1 + 2 * 3 * 2
    assert all(float(ln.split(",")[-1]) >= 0 for ln in lines[1:])


def test_oracle_required():
    mrp, f = build_feature_mrp(20, 4)
    with pytest.raises(ValueError):
        run_linear_policy_eval(LinearMethod("td0"), mrp, f, 10, None, None, np.random.default_rng(0))
