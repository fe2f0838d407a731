import numpy as np
import pytest

from rvf.baselines import monte_carlo_values, td0_episode, td_lambda_online_episode
from rvf.core import DivergenceError
from rvf.mrp import MarkovRewardProcess, ObservationMap, build_ychain, exact_values, ychain_states


def two_state_chain(gamma=0.9):
    # 0 -> 1 -> terminal(2); reward 1 on entering 1, 2 on entering the terminal
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    r = np.array([0.0, 1.0, 2.0])
    return MarkovRewardProcess(P, r, gamma, 0, frozenset({2}))


def test_td0_zero_discount_single_pass():
    mrp = two_state_chain(gamma=0.0)
    obs = ObservationMap.identity(3)
    theta = np.zeros(3)
    td0_episode(mrp, obs, theta, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(theta, [1.0, 2.0, 0.0])


def test_td0_decayed_rate_reaches_exact_values():
    mrp = two_state_chain()
    obs = ObservationMap.identity(3)
    theta = np.zeros(3)
    rng = np.random.default_rng(0)
    for k in range(1, 3001):
        td0_episode(mrp, obs, theta, 1.0 / k**0.6, rng)
    np.testing.assert_allclose(theta, exact_values(mrp), atol=1e-6)


def test_lambda_zero_equals_td0():
    mrp, obs = build_ychain(3, 0.9)
    a, b = np.zeros(obs.n_obs), np.zeros(obs.n_obs)
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(100):
        da = td0_episode(mrp, obs, a, 0.4, r1).deltas
        db = td_lambda_online_episode(mrp, obs, b, 0.4, 0.0, r2).deltas
        assert np.array_equal(da, db, equal_nan=True)
        assert np.array_equal(a, b)


def fork_chain():
    P = np.array([[0.0, 0.5, 0.5, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]])
    return MarkovRewardProcess(P, np.array([0.0, 1.0, 3.0, 0.5]), 0.9, 0, frozenset({3}))


def test_lambda_one_small_rate_approaches_monte_carlo():
    mrp = fork_chain()
    obs = ObservationMap.identity(4)
    theta = np.zeros(4)
    rng = np.random.default_rng(4)
    for k in range(1, 5001):
        td_lambda_online_episode(mrp, obs, theta, 0.5 / k**0.8, 1.0, rng)
    mc = monte_carlo_values(mrp, obs, np.random.default_rng(5), 20_000)
    assert np.max(np.abs(theta - mc.mean)) < 4 * mc.stderr[0] + 0.01


@pytest.mark.parametrize("learner", ["td0", "td_lambda"])
def test_aliased_value_collapses_to_zero(learner):
    mrp, obs = build_ychain(3, 0.9)
    a = obs(ychain_states(3)["S4"])
    theta = np.zeros(obs.n_obs)
    rng = np.random.default_rng(0)
    for k in range(1, 3001):
        lr = 0.5 / k**0.6
        if learner == "td0":
            td0_episode(mrp, obs, theta, lr, rng)
        else:
            td_lambda_online_episode(mrp, obs, theta, lr, 0.9, rng)
    assert abs(theta[a]) < 0.1


def test_baselines_converge_on_observable_chain():
    mrp = fork_chain()
    obs = ObservationMap.identity(4)
    v = exact_values(mrp)
    for lam in (None, 0.5):
        theta = np.zeros(4)
        rng = np.random.default_rng(9)
        for k in range(1, 20001):
            lr = 1.0 / k**0.7
            if lam is None:
                td0_episode(mrp, obs, theta, lr, rng)
            else:
                td_lambda_online_episode(mrp, obs, theta, lr, lam, rng)
        np.testing.assert_allclose(theta, v, atol=1e-2)


def test_monte_carlo_on_deterministic_chain():
    mrp = two_state_chain()
    mc = monte_carlo_values(mrp, ObservationMap.identity(3), np.random.default_rng(0), 3)
    np.testing.assert_allclose(mc.mean[:2], [1.0 + 0.9 * 2.0, 2.0])
    assert mc.count[2] == 3 and mc.mean[2] == 0.0


def test_monte_carlo_zero_discount_is_next_reward():
    mrp, obs = build_ychain(3, 0.0)
    mc = monte_carlo_values(mrp, obs, np.random.default_rng(1), 200)
    idx = ychain_states(3)
    assert mc.mean[obs(idx["top_end"])] == 1.0
    assert mc.mean[obs(idx["S1"])] == 0.0


def test_monte_carlo_ychain_within_three_se():
    mrp, obs = build_ychain(3, 0.9)
    mc = monte_carlo_values(mrp, obs, np.random.default_rng(2), 100_000)
    v = exact_values(mrp)
    idx = ychain_states(3)
    for key in ("S2", "S3", "S1"):
        o = obs(idx[key])
        assert abs(mc.mean[o] - v[idx[key]]) <= 3 * mc.stderr[o] + 1e-12
    o = obs(idx["S0"])
    assert abs(mc.mean[o] - v[0]) <= 3 * mc.stderr[o]


def test_unvisited_observation_is_missing():
    P = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    mrp = MarkovRewardProcess(P, np.array([0.0, 1.0, 0.0]), 0.5, 0, frozenset({1, 2}))
    mc = monte_carlo_values(mrp, ObservationMap.identity(3), np.random.default_rng(0), 5)
    assert mc.missing.tolist() == [False, False, True]
    assert np.isnan(mc.mean[2])
    with pytest.raises(ValueError):
        monte_carlo_values(mrp, ObservationMap.identity(3), np.random.default_rng(0), 0)


def test_divergence_guard():
    mrp, obs = build_ychain(3, 0.9)
    theta = np.full(obs.n_obs, 1e9)
    with pytest.raises(DivergenceError):
        td0_episode(mrp, obs, theta, 0.5, np.random.default_rng(0))
