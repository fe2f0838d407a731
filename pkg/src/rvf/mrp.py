"""Tabular Markov reward processes, observation maps and trajectory sampling.

Rewards are attached to the state being *entered*: a transition ``s -> s'`` out
of a non-terminal state pays ``reward[s']``.  Terminal states are absorbing
self-loops and pay nothing once reached, so

    V(s) = sum_s' P[s, s'] * (r[s'] + gamma * V(s'))      for non-terminal s
    V(s) = 0                                              for terminal s
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_TOL = 1e-12


class InvalidTopologyError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarkovRewardProcess:
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    start_state: int = 0
    terminals: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        n = P.shape[0]
        if P.ndim != 2 or P.shape != (n, n) or n == 0:
            raise ValueError(f"transition must be a non-empty square matrix, got {P.shape}")
        if r.shape != (n,):
            raise ValueError(f"reward must have shape ({n},), got {r.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.start_state < n:
            raise ValueError(f"start_state {self.start_state} out of range")
        terminals = frozenset(int(t) for t in self.terminals)
        for t in terminals:
            if not 0 <= t < n or P[t, t] != 1.0:
                raise ValueError(f"terminal state {t} must be an absorbing self-loop")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "start_state", int(self.start_state))
        object.__setattr__(self, "terminals", terminals)
        cdf = np.cumsum(P, axis=1)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)
        is_terminal = np.zeros(n, dtype=bool)
        is_terminal[list(terminals)] = True
        is_terminal.setflags(write=False)
        object.__setattr__(self, "is_terminal", is_terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def next_state(self, s: int, u: float) -> int:
        """Inverse-CDF draw of the successor of ``s`` from a uniform ``u``."""
        return int(np.searchsorted(self._cdf[s], u, side="right"))


@dataclass(frozen=True, eq=False)
class ObservationMap:
    obs_of_state: np.ndarray
    n_obs: int

    def __post_init__(self):
        obs = np.asarray(self.obs_of_state, dtype=np.intp)
        if obs.ndim != 1:
            raise ValueError("obs_of_state must be one-dimensional")
        if self.n_obs < 1 or set(obs.tolist()) != set(range(self.n_obs)):
            raise ValueError("observation map must be surjective onto [0, n_obs)")
        obs.setflags(write=False)
        object.__setattr__(self, "obs_of_state", obs)
        object.__setattr__(self, "n_obs", int(self.n_obs))

    @classmethod
    def identity(cls, n_states: int) -> "ObservationMap":
        return cls(np.arange(n_states), n_states)

    def __call__(self, state):
        return self.obs_of_state[state]


@dataclass
class Trajectory:
    """One sampled episode.

    ``rewards[t]`` is the reward received on entering ``states[t]``; the first
    entry is always 0.
    """

    states: np.ndarray
    observations: np.ndarray
    rewards: np.ndarray
    terminated: bool

    def __len__(self):
        return len(self.states)

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return list(zip(self.states.tolist(), self.observations.tolist(), self.rewards.tolist()))


# --------------------------------------------------------------------------
# Constructors


def ychain_states(branch_len: int = 3, stem_len: int = 3) -> dict[str, int]:
    """Named state indices of the Y-chain built with the same arguments.

    ``S0`` is the start, ``S1`` the fork, ``S2``/``S3`` the first states of the
    top/bottom branches, ``S4``/``S5`` the aliased penultimate branch states,
    ``top_end``/``bottom_end`` the last branch states and ``top_terminal``/
    ``bottom_terminal`` the absorbing states paying +1/-1 on entry.
    """
    if branch_len < 2:
        raise InvalidTopologyError(f"branch_len must be >= 2, got {branch_len}")
    if stem_len < 0:
        raise InvalidTopologyError(f"stem_len must be >= 0, got {stem_len}")
    fork = stem_len
    top = fork + 1
    bottom = top + branch_len
    return {
        "S0": 0,
        "S1": fork,
        "S2": top,
        "S3": bottom,
        "S4": top + branch_len - 2,
        "S5": bottom + branch_len - 2,
        "top_end": top + branch_len - 1,
        "bottom_end": bottom + branch_len - 1,
        "top_terminal": bottom + branch_len,
        "bottom_terminal": bottom + branch_len + 1,
    }


def build_ychain(branch_len: int = 3, gamma: float = 0.9, stem_len: int = 3):
    """Aliased Y-shaped chain.

    ``stem_len`` states lead from S0 to the fork S1, which moves to either
    branch with probability 0.5.  Each branch holds ``branch_len`` states and
    ends in a terminal paying +1 (top) or -1 (bottom).  The penultimate branch
    states S4 and S5 share one observation; every other state is observed
    exactly.  Returns ``(mrp, obs_map)``.
    """
    idx = ychain_states(branch_len, stem_len)
    n = idx["bottom_terminal"] + 1
    P = np.zeros((n, n))
    for s in range(idx["S1"]):
        P[s, s + 1] = 1.0
    P[idx["S1"], idx["S2"]] = 0.5
    P[idx["S1"], idx["S3"]] = 0.5
    for first, end, term in (("S2", "top_end", "top_terminal"), ("S3", "bottom_end", "bottom_terminal")):
        for s in range(idx[first], idx[end]):
            P[s, s + 1] = 1.0
        P[idx[end], idx[term]] = 1.0
        P[idx[term], idx[term]] = 1.0
    r = np.zeros(n)
    r[idx["top_terminal"]] = 1.0
    r[idx["bottom_terminal"]] = -1.0
    mrp = MarkovRewardProcess(P, r, gamma, 0, frozenset({idx["top_terminal"], idx["bottom_terminal"]}))

    obs = np.empty(n, dtype=np.intp)
    k = 0
    for s in range(n):
        if s == idx["S5"]:
            obs[s] = obs[idx["S4"]]
        else:
            obs[s] = k
            k += 1
    return mrp, ObservationMap(obs, k)


def check_reward_discount(gamma: float, d: float, r_min: float, r_max_tilde: float) -> None:
    """Raise ConstraintError naming the first violated reward/discount condition."""
    if not 0.5 < d <= 1.0:
        raise ConstraintError(f"D must lie in (0.5, 1], got D={d}")
    if not d > gamma:
        raise ConstraintError(f"D > gamma violated: D={d}, gamma={gamma}")
    if not r_min > 0:
        raise ConstraintError(f"rewards must be positive: R_min={r_min}")
    if not d * r_max_tilde <= r_min:
        raise ConstraintError(
            f"D*R_max <= R_min violated: {d}*{r_max_tilde}={d * r_max_tilde} > {r_min}"
        )


def build_random_mrp(
    n_states: int,
    seed: int,
    reward_range: tuple[float, float] = (0.8, 1.0),
    gamma: float = 0.5,
    d: float | None = None,
    enforce_reward_bounds: bool = False,
) -> MarkovRewardProcess:
    """Dense random ergodic chain with rewards uniform in ``reward_range``.

    Every transition probability is strictly positive, so the chain is
    irreducible and aperiodic.
    """
    r_min, r_max = reward_range
    if r_max < r_min:
        raise ConstraintError(f"empty reward range {reward_range}")
    if enforce_reward_bounds:
        if d is None:
            raise ConstraintError("enforce_reward_bounds requires D")
        check_reward_discount(gamma, d, r_min, r_max)
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    P = np.maximum(P, 1e-3)
    P /= P.sum(axis=1, keepdims=True)
    r = rng.uniform(r_min, r_max, size=n_states)
    return MarkovRewardProcess(P, r, gamma, 0, frozenset())


# --------------------------------------------------------------------------
# Sampling and exact quantities


def sample_trajectory(mrp: MarkovRewardProcess, obs_map: ObservationMap, rng: np.random.Generator,
                      max_steps: int = 10_000) -> Trajectory:
    """Roll out from the start state until a terminal or ``max_steps`` states."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    s = mrp.start_state
    states = [s]
    rewards = [0.0]
    is_terminal = mrp.is_terminal
    terminated = bool(is_terminal[s])
    while not terminated and len(states) < max_steps:
        s = mrp.next_state(s, rng.random())
        states.append(s)
        rewards.append(float(mrp.reward[s]))
        terminated = bool(is_terminal[s])
    states = np.array(states, dtype=np.intp)
    return Trajectory(states, obs_map.obs_of_state[states], np.array(rewards), terminated)


def exact_values(mrp: MarkovRewardProcess) -> np.ndarray:
    """Solve the Bellman linear system; terminal states are pinned to 0."""
    n = mrp.n_states
    live = ~mrp.is_terminal
    P = mrp.transition
    A = np.eye(n)[live][:, live] - mrp.gamma * P[live][:, live]
    b = P[live] @ mrp.reward
    V = np.zeros(n)
    V[live] = np.linalg.solve(A, b)
    residual = np.abs(V[live] - P[live] @ (mrp.reward + mrp.gamma * V)).max(initial=0.0)
    if not residual <= 1e-10:
        raise np.linalg.LinAlgError(f"Bellman residual {residual:.3e} exceeds 1e-10")
    return V


@dataclass
class StationaryReport:
    distribution: np.ndarray | None
    ergodic: bool
    transient_states: list[int]
    unreachable_states: list[int]
    message: str


def stationary_check(mrp: MarkovRewardProcess, tol: float = 1e-12, max_iter: int = 1_000_000) -> StationaryReport:
    P = mrp.transition
    n = mrp.n_states
    _, labels = connected_components(P > 0, directed=True, connection="strong")
    reach = _reachable(P, mrp.start_state)
    unreachable = [int(s) for s in np.flatnonzero(~reach)]
    if len(set(labels.tolist())) > 1:
        return StationaryReport(None, False, [], unreachable,
                                f"reducible chain: {len(set(labels.tolist()))} communicating classes")
    period = _period(P)
    if period > 1:
        return StationaryReport(None, False, [], unreachable, f"periodic chain with period {period}")
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ P
        if np.abs(nxt - mu).sum() < tol:
            mu = nxt / nxt.sum()
            transient = [int(s) for s in np.flatnonzero(mu < 1e-9)]
            return StationaryReport(mu, True, transient, unreachable, "ergodic")
        mu = nxt
    return StationaryReport(None, False, [], unreachable, "power iteration did not settle (periodic chain?)")


def _period(P: np.ndarray) -> int:
    """Period of an irreducible chain: gcd of level differences over all edges."""
    level = np.full(P.shape[0], -1)
    level[0] = 0
    order = [0]
    for s in order:
        for s2 in np.flatnonzero(P[s] > 0):
            if level[s2] < 0:
                level[s2] = level[s] + 1
                order.append(int(s2))
    g = 0
    for s, s2 in zip(*np.nonzero(P > 0)):
        g = math.gcd(g, int(abs(level[s] + 1 - level[s2])))
    return g


def _reachable(P: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(P.shape[0], dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        s = frontier.pop()
        for s2 in np.flatnonzero(P[s] > 0):
            if not seen[s2]:
                seen[s2] = True
                frontier.append(int(s2))
    return seen


# --------------------------------------------------------------------------
# Plain-text matrix format


def dumps_mrp(mrp: MarkovRewardProcess) -> str:
    out = io.StringIO()
    out.write(f"n_states {mrp.n_states}\n")
    out.write(f"gamma {mrp.gamma!r}\n")
    out.write(f"start {mrp.start_state}\n")
    out.write("terminals" + "".join(f" {t}" for t in sorted(mrp.terminals)) + "\n")
    for row in mrp.transition:
        out.write(" ".join(repr(float(p)) for p in row) + "\n")
    out.write(" ".join(repr(float(x)) for x in mrp.reward) + "\n")
    return out.getvalue()


def loads_mrp(text: str) -> MarkovRewardProcess:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip() and not ln.startswith("#")]
    header = {}
    for key in ("n_states", "gamma", "start", "terminals"):
        name, *vals = lines.pop(0).split()
        if name != key:
            raise ValueError(f"expected header field {key!r}, found {name!r}")
        header[key] = vals
    n = int(header["n_states"][0])
    if len(lines) != n + 1:
        raise ValueError(f"expected {n} transition rows and a reward row, found {len(lines)} lines")
    P = np.array([[float(x) for x in ln.split()] for ln in lines[:n]])
    r = np.array([float(x) for x in lines[n].split()])
    return MarkovRewardProcess(P, r, float(header["gamma"][0]), int(header["start"][0]),
                               frozenset(int(t) for t in header["terminals"]))


def save_mrp(mrp: MarkovRewardProcess, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_mrp(mrp))


def load_mrp(path) -> MarkovRewardProcess:
    with open(path) as fh:
        return loads_mrp(fh.read())


def first_visit_returns(traj: Trajectory, gamma: float, key: Iterable[int] | None = None) -> dict[int, float]:
    """Discounted return following the first visit of each key (observation by default)."""
    keys = traj.observations if key is None else np.asarray(key)
    G = 0.0
    out = {}
    rewards = traj.rewards
    for t in range(len(traj) - 1, -1, -1):
        out[int(keys[t])] = G
        G = rewards[t] + gamma * G
    return out
