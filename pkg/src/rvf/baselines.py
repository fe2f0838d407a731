"""Reference estimators: tabular TD(0), online TD(lambda) and Monte Carlo."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DIVERGENCE_LIMIT, DivergenceError, EpisodeReport
from .mrp import MarkovRewardProcess, ObservationMap, first_visit_returns, sample_trajectory


def _check(t, delta, theta):
    if not math.isfinite(delta) or abs(delta) > DIVERGENCE_LIMIT:
        raise DivergenceError(t, "delta", delta)
    big = np.max(np.abs(theta), initial=0.0)
    if not math.isfinite(big) or big > DIVERGENCE_LIMIT:
        raise DivergenceError(t, "theta", big)


def td0_episode(mrp: MarkovRewardProcess, obs_map: ObservationMap, theta: np.ndarray, lr: float,
                rng: np.random.Generator, max_steps: int = 10_000) -> EpisodeReport:
    """One episode of tabular TD(0) on observations, updating ``theta`` in place."""
    traj = sample_trajectory(mrp, obs_map, rng, max_steps)
    obs, r = traj.observations, traj.rewards
    terminal = mrp.is_terminal[traj.states]
    L = len(traj)
    deltas = np.full(L, np.nan)
    v_seen = np.empty(L)
    gamma = mrp.gamma
    for t in range(L):
        o = obs[t]
        v_seen[t] = theta[o]
        if t == L - 1:
            break
        target = r[t + 1] if terminal[t + 1] else r[t + 1] + gamma * theta[obs[t + 1]]
        delta = target - theta[o]
        theta[o] += lr * delta
        deltas[t] = delta
        _check(t, delta, theta)
    return EpisodeReport(traj, np.full(L, np.nan), v_seen, v_seen.copy(), deltas)


def td_lambda_online_episode(mrp: MarkovRewardProcess, obs_map: ObservationMap, theta: np.ndarray, lr: float,
                             lam: float, rng: np.random.Generator, max_steps: int = 10_000) -> EpisodeReport:
    """Online TD(lambda) with accumulating traces: ``z <- gamma*lam*z + grad V``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    traj = sample_trajectory(mrp, obs_map, rng, max_steps)
    obs, r = traj.observations, traj.rewards
    terminal = mrp.is_terminal[traj.states]
    L = len(traj)
    deltas = np.full(L, np.nan)
    v_seen = np.empty(L)
    gamma = mrp.gamma
    z = np.zeros_like(theta)
    decay = gamma * lam
    for t in range(L):
        o = obs[t]
        v_seen[t] = theta[o]
        if t == L - 1:
            break
        z = decay * z
        z[o] += 1.0
        target = r[t + 1] if terminal[t + 1] else r[t + 1] + gamma * theta[obs[t + 1]]
        delta = target - theta[o]
        theta += (lr * delta) * z
        deltas[t] = delta
        _check(t, delta, theta)
    return EpisodeReport(traj, np.full(L, np.nan), v_seen, v_seen.copy(), deltas)


@dataclass
class MonteCarloEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    count: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return self.count == 0


def monte_carlo_values(mrp: MarkovRewardProcess, obs_map: ObservationMap, rng: np.random.Generator,
                       n_episodes: int, max_steps: int = 10_000) -> MonteCarloEstimate:
    """First-visit discounted returns per observation.

    Observations never visited get ``nan`` mean and are flagged by ``missing``.
    Episodes cut at ``max_steps`` contribute their truncated returns.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    n = obs_map.n_obs
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    cnt = np.zeros(n, dtype=np.int64)
    for _ in range(n_episodes):
        traj = sample_trajectory(mrp, obs_map, rng, max_steps)
        for o, g in first_visit_returns(traj, mrp.gamma).items():
            s1[o] += g
            s2[o] += g * g
            cnt[o] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, s1 / cnt, np.nan)
        var = np.where(cnt > 1, (s2 - cnt * mean**2) / (cnt - 1), np.nan)
        se = np.sqrt(np.maximum(var, 0.0) / cnt)
    se[cnt == 1] = np.inf
    return MonteCarloEstimate(mean, se, cnt)
