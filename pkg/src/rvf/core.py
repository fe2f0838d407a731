"""Recurrent value functions: estimator, gradients, updates and episode runner.

The recurrent estimate smooths per-step value estimates along a trajectory,

    V^b_t = b_t * V(x_t) + (1 - b_t) * V^b_{t-1},      V^b_0 = V(x_0),

with an emphasis ``b_t = sigmoid(omega . x_t)``.  Everything here works on
feature vectors ``x_t``; the tabular case uses one-hot observations, so
``theta`` and ``omega`` are per-observation tables.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mrp import MarkovRewardProcess, ObservationMap, Trajectory, sample_trajectory

DIVERGENCE_LIMIT = 1e8


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, what: str, value: float):
        super().__init__(f"divergence at step {step}: {what} = {value!r}")
        self.step = step
        self.what = what
        self.value = value


class UnsupportedModeError(ValueError):
    pass


def sigmoid(x):
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def logit(p):
    return np.log(p) - np.log1p(-p)


def rvf_value(beta_t: float, v_t: float, v_beta_prev: float) -> float:
    return beta_t * v_t + (1.0 - beta_t) * v_beta_prev


def beta_gradient_scalar(target: float, v_beta_t: float, v_theta_t: float, v_beta_prev: float,
                         logit_t: float) -> float:
    """One-step ascent direction on an emphasis logit.

    Positive (emphasis grows) exactly when the error ``target - V^b_t`` and the
    innovation ``V(x_t) - V^b_{t-1}`` share a sign.
    """
    b = sigmoid(logit_t)
    return (target - v_beta_t) * (v_theta_t - v_beta_prev) * (b * (1.0 - b))


# --------------------------------------------------------------------------
# Parameters and per-episode recurrent state


@dataclass
class RvfParams:
    """Value weights ``theta`` and emphasis logits ``omega`` over a feature space.

    In the tabular case both are per-observation tables.  ``visits`` counts
    per-component updates and only matters for decaying step sizes.
    """

    theta: np.ndarray
    omega: np.ndarray
    visits: np.ndarray = None

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        self.omega = np.array(self.omega, dtype=float)
        if self.visits is None:
            self.visits = np.zeros(self.theta.shape[0])

    @classmethod
    def zeros(cls, n: int, omega_init: float = 0.0) -> "RvfParams":
        return cls(np.zeros(n), np.full(n, float(omega_init)))

    @property
    def beta(self) -> np.ndarray:
        return sigmoid(self.omega)

    def copy(self) -> "RvfParams":
        return RvfParams(self.theta.copy(), self.omega.copy(), self.visits.copy())


@dataclass
class _Record:
    phi: np.ndarray
    reward: float
    beta: float
    sig_grad: float
    v_theta: float
    prev: float
    fixed: float | None = None


@dataclass
class RvfRunState:
    """Within-episode state of the recursion.

    ``g_omega`` is the local (non-inherited) part of the omega gradient at the
    current step, used by the one-step emphasis rule.
    """

    v_beta: float
    e_theta: np.ndarray
    e_omega: np.ndarray
    t: int
    v_theta: float
    beta: float
    v_beta_prev: float
    g_omega: np.ndarray
    history: list = field(default_factory=list, repr=False)


def onehot(i: int, n: int) -> np.ndarray:
    x = np.zeros(n)
    x[i] = 1.0
    return x


def _beta_of(params: RvfParams, phi: np.ndarray, fixed_beta) -> tuple[float, float]:
    """(beta, d beta / d logit) for one feature vector."""
    if fixed_beta is not None:
        return float(fixed_beta), 0.0
    b = sigmoid(float(params.omega @ phi))
    return b, b * (1.0 - b)


def start_episode(phi0: np.ndarray, params: RvfParams, fixed_beta=None) -> RvfRunState:
    """Initialise the recursion with ``V^b_0 = V(x_0)``."""
    phi0 = np.asarray(phi0, dtype=float)
    v = float(params.theta @ phi0)
    b, s = _beta_of(params, phi0, fixed_beta)
    state = RvfRunState(v, phi0.copy(), np.zeros_like(params.omega), 0, v, b, math.nan,
                        np.zeros_like(params.omega))
    state.history.append(_Record(phi0, 0.0, 1.0, 0.0, v, math.nan))
    return state


def step_rvf(state: RvfRunState, phi: np.ndarray, params: RvfParams, *, mode: str = "trace",
             truncation: int | None = None, reward: float = 0.0, reward_adjusted: bool = False,
             fixed_beta=None) -> RvfRunState:
    """Advance the recursion by one step (in place) and return the state.

    ``mode="trace"`` propagates the gradients recursively with the parameters
    current at each step; ``mode="bptt"`` recomputes the estimate and its exact
    gradient from the stored prefix with the present parameters.  With frozen
    parameters the two coincide.  ``truncation`` limits the gradient to the
    last N steps, treating the estimate before the window as a constant.
    """
    phi = np.asarray(phi, dtype=float)
    v = float(params.theta @ phi)
    b, s = _beta_of(params, phi, fixed_beta)
    prev = state.v_beta - reward if reward_adjusted else state.v_beta
    keep = mode != "trace" or truncation is not None
    if keep:
        state.history.append(_Record(phi, reward, b, s, v, prev, fixed_beta))
    state.t += 1
    state.v_theta = v
    state.beta = b
    state.v_beta_prev = state.v_beta

    if mode == "trace" and truncation is None:
        state.v_beta = b * v + (1.0 - b) * prev
        state.e_theta = b * phi + (1.0 - b) * state.e_theta
        state.g_omega = (s * (v - prev)) * phi
        state.e_omega = state.g_omega + (1.0 - b) * state.e_omega
        return state
    if mode == "trace":
        if len(state.history) != state.t + 1:
            raise ValueError("truncated traces need the history from the start of the episode")
        _replay(state, state.history, truncation)
    elif mode == "bptt":
        _replay(state, _refresh(state.history, params, reward_adjusted), truncation)
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    return state


def _refresh(history, params, reward_adjusted):
    """Re-evaluate the stored prefix under the current parameters."""
    out = []
    v_beta = math.nan
    for j, rec in enumerate(history):
        v = float(params.theta @ rec.phi)
        if j == 0:
            out.append(_Record(rec.phi, rec.reward, 1.0, 0.0, v, math.nan))
            v_beta = v
            continue
        b, s = _beta_of(params, rec.phi, rec.fixed)
        prev = v_beta - rec.reward if reward_adjusted else v_beta
        out.append(_Record(rec.phi, rec.reward, b, s, v, prev, rec.fixed))
        v_beta = b * v + (1.0 - b) * prev
    return out


def _replay(state, records, truncation):
    t = len(records) - 1
    start = 0 if truncation is None else max(0, t - truncation + 1)
    first = records[0]
    v_beta = first.v_theta
    e_theta = np.zeros_like(state.e_theta)
    e_omega = np.zeros_like(state.e_omega)
    g_omega = np.zeros_like(state.e_omega)
    if start == 0:
        e_theta = first.phi.copy()
    for j in range(1, t + 1):
        rec = records[j]
        b = rec.beta
        v_beta = b * rec.v_theta + (1.0 - b) * rec.prev
        if j < start:
            continue
        g_omega = (rec.sig_grad * (rec.v_theta - rec.prev)) * rec.phi
        if j == start:
            e_theta = b * rec.phi
            e_omega = g_omega
        else:
            e_theta = b * rec.phi + (1.0 - b) * e_theta
            e_omega = g_omega + (1.0 - b) * e_omega
    state.v_beta = v_beta
    state.e_theta = e_theta
    state.e_omega = e_omega
    state.g_omega = g_omega
    last = records[-1]
    state.v_theta, state.beta, state.v_beta_prev = last.v_theta, last.beta, state.v_beta_prev


def rvf_estimates(params: RvfParams, phis, rewards=None, *, fixed_beta=None,
                  reward_adjusted: bool = False) -> np.ndarray:
    """Recurrent estimates along a feature sequence with frozen parameters."""
    phis = np.asarray(phis, dtype=float)
    v = phis @ params.theta
    if fixed_beta is not None:
        betas = np.broadcast_to(np.asarray(fixed_beta, dtype=float), v.shape)
    else:
        betas = sigmoid(phis @ params.omega)
    out = np.empty_like(v)
    out[0] = v[0]
    for t in range(1, len(v)):
        prev = out[t - 1] - rewards[t] if reward_adjusted else out[t - 1]
        out[t] = betas[t] * v[t] + (1.0 - betas[t]) * prev
    return out


def rtd_update(params: RvfParams, state: RvfRunState, target: float, lr_theta: float, lr_omega: float,
               *, gate: float = 0.0, update_omega: bool = True, omega_grad: str = "recursive",
               lr_decay: float = 0.0) -> float:
    """Semi-gradient step on ``theta`` and ``omega``; returns the error.

    ``gate`` zeroes value-trace components whose magnitude is below it.
    ``lr_decay`` > 0 scales each component's value step by
    ``(1 + visits)**-lr_decay``.
    """
    delta = target - state.v_beta
    if not math.isfinite(delta) or abs(delta) > DIVERGENCE_LIMIT:
        raise DivergenceError(state.t, "delta", delta)
    e = state.e_theta
    if gate > 0.0:
        e = np.where(np.abs(e) >= gate, e, 0.0)
    if lr_decay > 0.0:
        active = e != 0.0
        params.visits[active] += 1
        params.theta += (lr_theta * delta) * np.where(active, (1.0 + params.visits) ** -lr_decay, 0.0) * e
    else:
        params.theta += (lr_theta * delta) * e
    if update_omega:
        g = state.e_omega if omega_grad == "recursive" else state.g_omega
        g = delta * g
        big = np.max(np.abs(g), initial=0.0)
        if not math.isfinite(big) or big > DIVERGENCE_LIMIT:
            raise DivergenceError(state.t, "omega gradient", big)
        params.omega += lr_omega * g
    big = np.max(np.abs(params.theta), initial=0.0)
    if not math.isfinite(big) or big > DIVERGENCE_LIMIT:
        raise DivergenceError(state.t, "theta", big)
    return delta


# --------------------------------------------------------------------------
# Targets


@dataclass(frozen=True)
class TargetSpec:
    kind: str = "td0"
    n: int | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in ("td0", "nstep", "lambda", "mc"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "nstep" and (self.n is None or self.n < 1):
            raise ValueError("n-step target needs n >= 1")
        if self.kind == "lambda" and (self.lam is None or not 0.0 <= self.lam <= 1.0):
            raise ValueError("lambda-return target needs lambda in [0, 1]")

    @classmethod
    def td0(cls):
        return cls("td0")

    @classmethod
    def nstep(cls, n: int):
        return cls("nstep", n=n)

    @classmethod
    def lambda_return(cls, lam: float):
        return cls("lambda", lam=lam)

    @classmethod
    def monte_carlo(cls):
        return cls("mc")

    @property
    def is_offline(self) -> bool:
        return self.kind != "td0"


def compute_targets(spec: TargetSpec, traj: Trajectory, values, gamma: float) -> np.ndarray:
    """Targets for every step that has a successor.

    ``values[k]`` is the bootstrap estimate for step ``k``; the value of a
    terminal step is taken as 0 whatever ``values`` says.
    """
    L = len(traj)
    r = traj.rewards
    v = np.array(values, dtype=float)
    if traj.terminated:
        v[-1] = 0.0
    if L < 2:
        return np.empty(0)
    if spec.kind == "td0":
        return r[1:] + gamma * v[1:]
    if spec.kind == "nstep":
        out = np.empty(L - 1)
        for t in range(L - 1):
            end = min(t + spec.n, L - 1)
            g = 0.0
            for k in range(end, t, -1):
                g = r[k] + gamma * g
            out[t] = g + gamma ** (end - t) * v[end]
        return out
    lam = 1.0 if spec.kind == "mc" else spec.lam
    out = np.empty(L - 1)
    g = v[-1]
    for t in range(L - 2, -1, -1):
        g = r[t + 1] + gamma * ((1.0 - lam) * v[t + 1] + lam * g)
        out[t] = g
    return out


def compute_target(spec: TargetSpec, traj: Trajectory, values, gamma: float, t: int, *,
                   episode_complete: bool = True) -> float:
    """Target for step ``t``.  Forward-view returns need the finished episode."""
    if spec.kind in ("lambda", "mc") and not episode_complete:
        raise UnsupportedModeError(f"{spec.kind} target is computed offline at episode end")
    return float(compute_targets(spec, traj, values, gamma)[t])


# --------------------------------------------------------------------------
# Episode runner


@dataclass
class RtdConfig:
    """Hyperparameters of one RTD learner.

    Defaults are the toy-chain values: value step 0.5, emphasis step 1.0 and a
    lambda-return target with lambda 0.9.
    """

    target: TargetSpec = field(default_factory=lambda: TargetSpec.lambda_return(0.9))
    lr_theta: float = 0.5
    lr_omega: float = 1.0
    mode: str = "trace"
    truncation: int | None = None
    omega_grad: str = "recursive"
    gate: float = 0.0
    fixed_beta: object = None
    reward_adjusted: bool = False
    bootstrap: str = "rvf"
    lr_decay: float = 0.0
    max_steps: int = 10_000

    def validate(self):
        if not self.lr_theta > 0:
            raise ValueError("lr_theta must be > 0")
        if self.fixed_beta is None and not self.lr_omega > 0:
            raise ValueError("lr_omega must be > 0 when the emphasis is learned")
        if not 0.0 <= self.gate < 1.0:
            raise ValueError("gate must lie in [0, 1)")
        if self.mode not in ("trace", "bptt"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.omega_grad not in ("recursive", "one_step"):
            raise ValueError(f"unknown omega_grad {self.omega_grad!r}")
        if self.bootstrap not in ("rvf", "value"):
            raise ValueError(f"unknown bootstrap {self.bootstrap!r}")
        if self.truncation is not None and self.truncation < 1:
            raise ValueError("truncation must be >= 1")


@dataclass
class EpisodeReport:
    trajectory: Trajectory
    betas: np.ndarray
    v_theta: np.ndarray
    v_beta: np.ndarray
    deltas: np.ndarray

    def rows(self, episode: int):
        tr = self.trajectory
        for t in range(len(tr)):
            yield (episode, t, int(tr.states[t]), int(tr.observations[t]), float(tr.rewards[t]),
                   _fmt(self.betas[t]), float(self.v_theta[t]), float(self.v_beta[t]), _fmt(self.deltas[t]))


EPISODE_COLUMNS = ("episode", "step", "state", "obs", "reward", "beta", "v_theta", "v_beta", "delta")


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def write_episode_csv(reports, fh, start_episode: int = 0) -> None:
    w = csv.writer(fh)
    w.writerow(EPISODE_COLUMNS)
    for k, rep in enumerate(reports):
        w.writerows(rep.rows(start_episode + k))


def _fixed_beta_lookup(fixed_beta, n_obs):
    if fixed_beta is None:
        return None
    fb = np.asarray(fixed_beta, dtype=float)
    if fb.ndim == 0:
        fb = np.full(n_obs, float(fb))
    if fb.shape != (n_obs,) or np.any(fb < 0) or np.any(fb > 1):
        raise ValueError("fixed_beta must be a scalar or per-observation array in [0, 1]")
    return fb


def run_rtd_episode(mrp: MarkovRewardProcess, obs_map: ObservationMap, params: RvfParams, config: RtdConfig,
                    rng: np.random.Generator) -> EpisodeReport:
    """Sample one episode and apply recurrent TD updates online.

    Offline targets (n-step, lambda-return, Monte Carlo) bootstrap on
    estimates computed with the parameters held at the start of the episode.
    """
    config.validate()
    n_obs = obs_map.n_obs
    fb = _fixed_beta_lookup(config.fixed_beta, n_obs)
    traj = sample_trajectory(mrp, obs_map, rng, config.max_steps)
    obs = traj.observations
    rewards = traj.rewards
    L = len(traj)
    eye = np.eye(n_obs)
    phis = eye[obs]
    terminal = mrp.is_terminal[traj.states]
    gamma = mrp.gamma

    targets = None
    if config.target.is_offline:
        if config.bootstrap == "rvf":
            boot = rvf_estimates(params, phis, rewards, fixed_beta=None if fb is None else fb[obs],
                                 reward_adjusted=config.reward_adjusted)
        else:
            boot = params.theta[obs]
        targets = compute_targets(config.target, traj, boot, gamma)

    betas = np.full(L, np.nan)
    v_theta = np.empty(L)
    v_beta = np.empty(L)
    deltas = np.full(L, np.nan)
    learn_omega = fb is None

    state = start_episode(phis[0], params, None if fb is None else fb[obs[0]])
    for t in range(L):
        if t > 0:
            state = step_rvf(state, phis[t], params, mode=config.mode, truncation=config.truncation,
                             reward=rewards[t], reward_adjusted=config.reward_adjusted,
                             fixed_beta=None if fb is None else fb[obs[t]])
        betas[t] = state.beta
        v_theta[t] = state.v_theta
        v_beta[t] = state.v_beta
        if t == L - 1:
            break
        if targets is not None:
            target = targets[t]
        elif terminal[t + 1]:
            target = rewards[t + 1]
        else:
            o2 = obs[t + 1]
            nxt = params.theta[o2]
            if config.bootstrap == "rvf":
                b2 = fb[o2] if fb is not None else sigmoid(params.omega[o2])
                prev = state.v_beta - rewards[t + 1] if config.reward_adjusted else state.v_beta
                nxt = b2 * nxt + (1.0 - b2) * prev
            target = rewards[t + 1] + gamma * nxt
        try:
            deltas[t] = rtd_update(params, state, target, config.lr_theta, config.lr_omega, gate=config.gate,
                                   update_omega=learn_omega, omega_grad=config.omega_grad,
                                   lr_decay=config.lr_decay)
        except DivergenceError as err:
            err.report = EpisodeReport(traj, betas, v_theta, v_beta, deltas)
            raise
    return EpisodeReport(traj, betas, v_theta, v_beta, deltas)
