"""Policy evaluation with fixed linear features and RMSVE scoring.

The environment is a synthetic stand-in for a feature-based control task: a
lazy random walk on a ring, so consecutive states have similar values, with
features made of a smooth informative block plus fixed Gaussian distractor
noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RvfParams, rtd_update, sigmoid, start_episode, step_rvf
from .baselines import _check
from .mrp import MarkovRewardProcess, ObservationMap, sample_trajectory


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    phi: np.ndarray
    informative: np.ndarray | None = None

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2 or not np.all(np.isfinite(phi)):
            raise ValueError("features must be a finite 2-D array")
        if np.any(np.all(phi == 0.0, axis=1)):
            raise ValueError("every state needs a non-zero feature row")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    @property
    def k(self) -> int:
        return self.phi.shape[1]


@dataclass
class LinearValueFn:
    w: np.ndarray

    def predict(self, features: FeatureMatrix, states=None) -> np.ndarray:
        phi = features.phi if states is None else features.phi[states]
        return phi @ self.w


def build_feature_mrp(n_states: int = 20, k: int = 4, seed: int = 0, noise_level: float = 0.5,
                      gamma: float = 0.9) -> tuple[MarkovRewardProcess, FeatureMatrix]:
    """Ring random walk with smooth rewards and noisy smooth features.

    With ``k == n_states`` the informative block is the identity, which makes
    the linear learner tabular.  Otherwise it is a ``k``-column cosine/sine
    basis over the ring, which has full column rank.
    """
    if not 1 <= k <= n_states:
        raise ValueError("need 1 <= k <= n_states")
    rng = np.random.default_rng(seed)
    P = np.zeros((n_states, n_states))
    for s in range(n_states):
        left, stay, right = rng.dirichlet([2.0, 1.0, 2.0])
        P[s, (s - 1) % n_states] += left
        P[s, s] += stay
        P[s, (s + 1) % n_states] += right
    angle = 2 * np.pi * np.arange(n_states) / n_states
    phase = rng.uniform(0, 2 * np.pi)
    reward = 1.0 + 0.5 * np.sin(angle + phase) + 0.1 * rng.standard_normal(n_states)
    mrp = MarkovRewardProcess(P, reward, gamma, 0, frozenset())

    if k == n_states:
        info = np.eye(n_states)
    else:
        cols = [np.ones(n_states)]
        freq = 1
        while len(cols) < k:
            cols.append(np.cos(freq * angle))
            if len(cols) < k:
                cols.append(np.sin(freq * angle))
            freq += 1
        info = np.column_stack(cols)
    phi = info + noise_level * rng.standard_normal(info.shape)
    return mrp, FeatureMatrix(phi, info)


def rmsve(predictions, oracle, eval_states=None) -> float:
    pred = np.asarray(predictions, dtype=float)
    orc = np.asarray(oracle, dtype=float)
    if eval_states is not None:
        pred, orc = pred[eval_states], orc[eval_states]
    return float(np.sqrt(np.mean((pred - orc) ** 2)))


@dataclass(frozen=True)
class LinearMethod:
    """One learner.  ``kind`` is ``"td0"``, ``"td_lambda"`` or ``"rvf"``.

    Defaults follow the feature-based policy-evaluation study: step 0.005 for
    TD(0) and RVF, 0.0005 for eligibility traces with lambda 0.9, and 0.005
    for the emphasis weights.
    """

    kind: str = "td0"
    lr: float | None = None
    lam: float = 0.9
    lr_beta: float = 0.005
    fixed_beta: float | None = None
    bootstrap: str = "rvf"
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("td0", "td_lambda", "rvf"):
            raise ValueError(f"unknown method {self.kind!r}")
        if self.lr is None:
            object.__setattr__(self, "lr", 0.0005 if self.kind == "td_lambda" else 0.005)
        if self.name is None:
            label = {"td0": "TD(0)", "td_lambda": f"TD({self.lam:g})", "rvf": "RVF"}[self.kind]
            object.__setattr__(self, "name", label)


def _checkpoints(n_transitions, every):
    pts = list(range(every, n_transitions + 1, every))
    if not pts or pts[-1] != n_transitions:
        pts.append(n_transitions)
    return pts


def run_linear_policy_eval(method: LinearMethod, mrp: MarkovRewardProcess, features: FeatureMatrix,
                           n_transitions: int = 5000, eval_states=None, oracle_values=None,
                           rng: np.random.Generator | None = None, states=None,
                           checkpoint_every: int = 250) -> tuple[np.ndarray, np.ndarray]:
    """Train on one sample of transitions and return ``(checkpoints, rmsve)``.

    ``states`` may pass a pre-sampled state sequence so several methods can
    share the same sample; otherwise one is drawn from ``rng``.
    """
    if oracle_values is None:
        raise ValueError("oracle_values are required")
    if states is None:
        obs_map = ObservationMap.identity(mrp.n_states)
        states = sample_trajectory(mrp, obs_map, rng, n_transitions + 1).states
    states = np.asarray(states)
    if len(states) < n_transitions + 1:
        raise ValueError("state sequence shorter than the transition budget")
    Phi = features.phi
    r = mrp.reward
    gamma = mrp.gamma
    marks = _checkpoints(n_transitions, checkpoint_every)
    curve = np.empty(len(marks))
    m = 0
    w = np.zeros(features.k)

    def score():
        return rmsve(Phi @ w, oracle_values, eval_states)

    if method.kind == "rvf":
        params = RvfParams(w, np.zeros(features.k))
        w = params.theta
        fb = method.fixed_beta
        state = start_episode(Phi[states[0]], params, fb)
        for t in range(n_transitions):
            if t > 0:
                state = step_rvf(state, Phi[states[t]], params, fixed_beta=fb)
            x2 = Phi[states[t + 1]]
            nxt = float(w @ x2)
            if method.bootstrap == "rvf":
                b2 = fb if fb is not None else sigmoid(float(params.omega @ x2))
                nxt = b2 * nxt + (1.0 - b2) * state.v_beta
            target = r[states[t + 1]] + gamma * nxt
            rtd_update(params, state, target, method.lr, method.lr_beta, update_omega=fb is None)
            if t + 1 == marks[m]:
                curve[m] = score()
                m += 1
        return np.array(marks), curve

    z = np.zeros(features.k)
    decay = gamma * method.lam if method.kind == "td_lambda" else 0.0
    for t in range(n_transitions):
        x = Phi[states[t]]
        x2 = Phi[states[t + 1]]
        delta = r[states[t + 1]] + gamma * float(w @ x2) - float(w @ x)
        z = decay * z + x
        w += (method.lr * delta) * z
        _check(t, delta, w)
        if t + 1 == marks[m]:
            curve[m] = score()
            m += 1
    return np.array(marks), curve


@dataclass
class LinearComparison:
    checkpoints: np.ndarray
    curves: dict = field(default_factory=dict)

    def final(self, name: str) -> np.ndarray:
        return self.curves[name][:, -1]


def compare_linear_methods(methods, mrp: MarkovRewardProcess, features: FeatureMatrix, oracle_values,
                           n_replicates: int = 40, n_transitions: int = 5000, seed: int = 0,
                           eval_states=None, checkpoint_every: int = 250) -> LinearComparison:
    """Run every method on the same ``n_replicates`` transition samples."""
    obs_map = ObservationMap.identity(mrp.n_states)
    out = LinearComparison(np.array(_checkpoints(n_transitions, checkpoint_every)))
    for meth in methods:
        out.curves[meth.name] = np.empty((n_replicates, len(out.checkpoints)))
    for rep in range(n_replicates):
        rng = np.random.default_rng([seed, rep])
        states = sample_trajectory(mrp, obs_map, rng, n_transitions + 1).states
        for meth in methods:
            _, curve = run_linear_policy_eval(meth, mrp, features, n_transitions, eval_states, oracle_values,
                                              states=states, checkpoint_every=checkpoint_every)
            out.curves[meth.name][rep] = curve
    return out


def write_rmsve_csv(comparison: LinearComparison, fh) -> None:
    import csv

    w = csv.writer(fh)
    w.writerow(("method", "replicate", "transition_count", "rmsve"))
    for name, curves in comparison.curves.items():
        for rep, curve in enumerate(curves):
            for n, v in zip(comparison.checkpoints, curve):
                w.writerow((name, rep, int(n), repr(float(v))))
