"""Contraction machinery for tabular recurrent TD with a fixed emphasis.

The quantities here follow the decomposition of a recurrent update to
``V(s_i)`` made at time ``t``:

    V^b(s_t) = V(s_i) - Delta_t(s_i)
    Delta_t(s_i) = (1 - C_t(s_i)) * (V(s_i) - V~_t(s_i))
    C_t(s_i) = b_i * prod_{p=i+1..t} (1 - b_p)

where ``V~`` is the convex combination of every other value on the path.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .mrp import ConstraintError, MarkovRewardProcess, build_random_mrp, check_reward_discount, stationary_check


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ContractionConfig:
    gamma: float
    d: float
    c: float = 0.0
    r_min: float = 0.8
    r_max_tilde: float = 1.0

    def check(self) -> None:
        """Raise ConstraintError unless the reward/discount assumption holds."""
        check_reward_discount(self.gamma, self.d, self.r_min, self.r_max_tilde)
        if not 0.0 <= self.c < 1.0:
            raise ConstraintError(f"gating threshold must lie in [0, 1), got C={self.c}")

    @property
    def modulus(self) -> float:
        return self.gamma + (1.0 - self.d)


def value_bounds(cfg: ContractionConfig) -> tuple[float, float]:
    """(V_min, V_max) of the invariant box."""
    upper = 1.0 - (cfg.gamma + (1.0 - cfg.d))
    lower = 1.0 - (cfg.gamma - (1.0 - cfg.d))
    if upper <= 0 or lower <= 0:
        raise ConstraintError(f"gamma + (1 - D) must be < 1, got gamma={cfg.gamma}, D={cfg.d}")
    return cfg.r_min / lower, cfg.r_max_tilde / upper


def gating_ratio(gamma: float, d: float, c: float) -> float:
    """Left-hand side of the threshold inequality; admissible iff <= 1.

    The bracket ``1 - (gamma + (1 - D)) * ((1 - D) + (1 - C))`` in the
    denominator is read as a single product term.
    """
    x = 1.0 - c
    num = d * x * (1.0 - (gamma - (1.0 - d)))
    den = 1.0 - (gamma + (1.0 - d)) * ((1.0 - d) + x)
    return num / den if den > 0 else math.inf


def min_gating_threshold(gamma: float, d: float) -> float:
    """Smallest C in [0, 1) with ``gating_ratio(gamma, d, C) <= 1``.

    The inequality is linear in ``1 - C`` once cleared of its (positive)
    denominator, so the boundary has a closed form.
    """
    if not 0.5 < d <= 1.0 or not d > gamma or not 0.0 <= gamma < 1.0:
        raise ConstraintError(f"need D in (0.5, 1], D > gamma, gamma in [0, 1); got gamma={gamma}, D={d}")
    a = gamma + (1.0 - d)
    x_max = (1.0 - a * (1.0 - d)) / (d * (1.0 - (gamma - (1.0 - d))) + a)
    c = 1.0 - x_max
    if c >= 1.0:
        raise ConstraintError(f"no gating threshold in [0, 1) works for gamma={gamma}, D={d}")
    return max(c, 0.0)


def value_gap_condition(cfg: ContractionConfig) -> tuple[bool, float]:
    """Check ``(1 - C)(V_max - V_min) <= (1 - D) V_min``; returns (holds, slack)."""
    v_min, v_max = value_bounds(cfg)
    slack = (1.0 - cfg.d) * v_min - (1.0 - cfg.c) * (v_max - v_min)
    return slack >= 0, slack


def min_threshold_for_rewards(cfg: ContractionConfig) -> float:
    """Smallest C meeting ``value_gap_condition`` for the configured reward bounds."""
    v_min, v_max = value_bounds(cfg)
    if v_max <= v_min:
        return 0.0
    return max(0.0, 1.0 - (1.0 - cfg.d) * v_min / (v_max - v_min))


# --------------------------------------------------------------------------
# Decomposition


@dataclass
class DecompositionReport:
    c_t: float
    v_tilde: float
    delta: float
    v_beta: float
    weights: np.ndarray
    degenerate: bool = False


def path_weights(betas) -> np.ndarray:
    """Weight of each path value in the recurrent estimate at the last step.

    The first emphasis is ignored: the recursion is initialised with
    ``V^b_0 = V_0``.
    """
    b = np.array(betas, dtype=float)
    b[0] = 1.0
    keep = np.cumprod((1.0 - b)[:0:-1])[::-1]
    w = b.copy()
    w[:-1] *= keep
    return w


def decompose_update(betas, values, i: int) -> DecompositionReport:
    """Split ``V^b(s_t)`` into ``V(s_i) - Delta_t(s_i)``.

    ``betas`` and ``values`` run over steps ``1..t`` and ``i`` is 1-based, so
    ``decompose_update([.9, .1, .1], v, 2).c_t == 0.1 * 0.9``.
    """
    b = np.asarray(betas, dtype=float)
    v = np.asarray(values, dtype=float)
    t = len(b)
    if v.shape != (t,) or not 1 <= i <= t:
        raise ValueError("betas and values must align and 1 <= i <= len(betas)")
    i -= 1
    if np.any(b[1:] <= 0) or np.any(b > 1):
        raise ValueError("emphasis values must lie in (0, 1]")
    w = path_weights(b)
    v_beta = 0.0
    for k in range(t):
        v_beta = v[k] if k == 0 else b[k] * v[k] + (1.0 - b[k]) * v_beta
    c = w[i]
    rest = w.copy()
    rest[i] = 0.0
    if 1.0 - c <= 0.0:
        return DecompositionReport(c, math.nan, 0.0, v_beta, rest, degenerate=True)
    rest /= 1.0 - c
    v_tilde = float(rest @ v)
    return DecompositionReport(c, v_tilde, (1.0 - c) * (v[i] - v_tilde), v_beta, rest)


# --------------------------------------------------------------------------
# The operator


def _stationary(mrp):
    rep = stationary_check(mrp)
    if not rep.ergodic:
        raise ConstraintError(f"operator needs an ergodic chain: {rep.message}")
    return rep.distribution


def sample_paths(mrp: MarkovRewardProcess, rng: np.random.Generator, n_samples: int, horizon: int) -> np.ndarray:
    """``n_samples`` paths of ``horizon + 1`` states started from stationarity."""
    mu = _stationary(mrp)
    cdf = np.cumsum(mrp.transition, axis=1)
    n = mrp.n_states
    s = np.empty((n_samples, horizon + 1), dtype=np.intp)
    s[:, 0] = np.minimum(np.searchsorted(np.cumsum(mu), rng.random(n_samples), side="right"), n - 1)
    for t in range(horizon):
        u = rng.random(n_samples)
        s[:, t + 1] = np.minimum((cdf[s[:, t]] <= u[:, None]).sum(axis=1), n - 1)
    return s


def _operator_terms(mrp, V, beta, c, paths, include_reward=True):
    """Per-path numerators and denominators of the gated operator.

    For every pair ``i <= t`` on a path with ``C_t(s_i) >= c`` (``> 0`` when
    ``c == 0``) the update target ``r_{t+1} + gamma V(s_{t+1}) + Delta_t(s_i)``
    is accumulated for state ``s_i`` with weight ``C_t(s_i)``.
    """
    m, h1 = paths.shape
    horizon = h1 - 1
    n = mrp.n_states
    b = np.asarray(beta, dtype=float)[paths]
    b[:, 0] = 1.0
    vs = np.asarray(V, dtype=float)[paths]
    vb = np.empty((m, horizon))
    vb[:, 0] = vs[:, 0]
    for t in range(1, horizon):
        vb[:, t] = b[:, t] * vs[:, t] + (1.0 - b[:, t]) * vb[:, t - 1]
    tgt = mrp.gamma * vs[:, 1:]
    if include_reward:
        tgt = tgt + mrp.reward[paths[:, 1:]]
    num = np.zeros((m, n))
    den = np.zeros((m, n))
    rows = np.arange(m)
    for t in range(horizon):
        keep = np.ones(m)
        for i in range(t, -1, -1):
            C = b[:, i] * keep
            sel = C >= c if c > 0 else C > 0
            if sel.any():
                val = tgt[:, t] + vs[:, i] - vb[:, t]
                np.add.at(num, (rows[sel], paths[sel, i]), (C * val)[sel])
                np.add.at(den, (rows[sel], paths[sel, i]), C[sel])
            keep = keep * (1.0 - b[:, i])
    return num, den


def _check_domain(V, cfg):
    v_min, v_max = value_bounds(cfg)
    V = np.asarray(V, dtype=float)
    if np.any(V < v_min - 1e-12) or np.any(V > v_max + 1e-12):
        raise DomainError(f"values must lie in [{v_min}, {v_max}]")
    return V


def apply_operator(mrp: MarkovRewardProcess, V, beta, cfg: ContractionConfig, rng: np.random.Generator,
                   n_samples: int = 2000, horizon: int = 8, paths: np.ndarray | None = None) -> np.ndarray:
    """Monte Carlo estimate of the gated recurrent operator applied to ``V``.

    Paths of ``horizon`` transitions start from the stationary distribution;
    states that receive no admissible update keep their value.
    """
    V = _check_domain(V, cfg)
    if paths is None:
        paths = sample_paths(mrp, rng, n_samples, horizon)
    num, den = _operator_terms(mrp, V, beta, cfg.c, paths)
    tot = den.sum(axis=0)
    out = V.copy()
    ok = tot > 0
    out[ok] = num.sum(axis=0)[ok] / tot[ok]
    return out


def apply_operator_exact(mrp: MarkovRewardProcess, V, beta, cfg: ContractionConfig, horizon: int = 4) -> np.ndarray:
    """Exact expectation of the same operator by enumerating every path."""
    V = _check_domain(V, cfg)
    n = mrp.n_states
    if n > 10 or n ** (horizon + 1) > 2_000_000:
        raise ValueError("exact enumeration is limited to small chains and horizons")
    mu = _stationary(mrp)
    paths = np.array(list(itertools.product(range(n), repeat=horizon + 1)), dtype=np.intp)
    prob = mu[paths[:, 0]] * np.prod(mrp.transition[paths[:, :-1], paths[:, 1:]], axis=1)
    num, den = _operator_terms(mrp, V, beta, cfg.c, paths)
    tot = prob @ den
    out = V.copy()
    ok = tot > 0
    out[ok] = (prob @ num)[ok] / tot[ok]
    return out


@dataclass
class CertificationReport:
    max_ratio: float
    bound: float
    slack: float
    passed: bool
    ratios: np.ndarray
    worst_case_modulus: float

    @property
    def worst_case_exceeds(self) -> bool:
        return self.worst_case_modulus > self.bound


def _difference(mrp, d, beta, c, paths):
    """Per-state estimate of (T V - T U) for ``d = V - U`` and its standard error."""
    num, den = _operator_terms(mrp, d, beta, c, paths, include_reward=False)
    tot = den.sum(axis=0)
    diff = np.array(d, dtype=float)
    se = np.zeros_like(diff)
    ok = tot > 0
    diff[ok] = num.sum(axis=0)[ok] / tot[ok]
    resid = num[:, ok] - diff[ok] * den[:, ok]
    se[ok] = np.sqrt((resid**2).sum(axis=0)) / tot[ok]
    return diff, se


def certify_contraction(mrp: MarkovRewardProcess, cfg: ContractionConfig, n_pairs: int, rng: np.random.Generator,
                        beta=None, n_samples: int = 4000, horizon: int = 8) -> CertificationReport:
    """Estimate contraction ratios of the operator on random pairs in the box.

    Both members of a pair are evaluated on the same sampled paths, so the
    reward terms cancel exactly.  The check passes when every ratio is at
    most ``gamma + (1 - D)`` plus three standard errors.  The operator's
    induced sup-norm over all directions is reported separately as
    ``worst_case_modulus``.
    """
    v_min, v_max = value_bounds(cfg)
    if not v_max > v_min:
        raise ConstraintError(f"value box [{v_min}, {v_max}] is empty; no pairs to compare")
    n = mrp.n_states
    if beta is None:
        beta = rng.uniform(0.05, 1.0, n)
    paths = sample_paths(mrp, rng, n_samples, horizon)
    bound = cfg.modulus
    ratios = np.empty(n_pairs)
    passed = True
    worst_slack = 0.0
    for k in range(n_pairs):
        V = rng.uniform(v_min, v_max, n)
        U = rng.uniform(v_min, v_max, n)
        d = V - U
        scale = np.abs(d).max()
        diff, se = _difference(mrp, d, beta, cfg.c, paths)
        s = int(np.argmax(np.abs(diff)))
        ratios[k] = abs(diff[s]) / scale
        slack = 3.0 * se[s] / scale
        if ratios[k] > bound + slack:
            passed = False
        if k == int(np.argmax(ratios[: k + 1])):
            worst_slack = slack
    cols = [_difference(mrp, np.eye(n)[j], beta, cfg.c, paths)[0] for j in range(n)]
    modulus = float(np.abs(np.column_stack(cols)).sum(axis=1).max())
    return CertificationReport(float(ratios.max()), bound, worst_slack, passed, ratios, modulus)


def certify_random_mrps(cfg: ContractionConfig, n_mrps: int = 20, seed: int = 0, sizes=(5, 8),
                        n_pairs: int = 20, n_samples: int = 4000, horizon: int = 8) -> list[CertificationReport]:
    """Certify ``n_mrps`` random chains whose rewards satisfy the assumption.

    Chain ``j`` has between ``sizes[0]`` and ``sizes[1]`` states (inclusive)
    and rewards uniform in ``[D * R_max, R_max]``; each gets its own emphasis
    vector uniform in ``(0.05, 1)``.
    """
    cfg.check()
    rng = np.random.default_rng(seed)
    lo = max(cfg.r_min, cfg.d * cfg.r_max_tilde)
    reports = []
    for j in range(n_mrps):
        n = int(rng.integers(sizes[0], sizes[1] + 1))
        mrp = build_random_mrp(n, int(rng.integers(2**31)), (lo, cfg.r_max_tilde), cfg.gamma, cfg.d,
                               enforce_reward_bounds=True)
        reports.append(certify_contraction(mrp, cfg, n_pairs, rng, n_samples=n_samples, horizon=horizon))
    return reports
