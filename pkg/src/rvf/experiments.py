"""Single-seed runs of the synthetic experiments, returning learning curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import td0_episode, td_lambda_online_episode
from .core import DivergenceError, RtdConfig, RvfParams, TargetSpec, run_rtd_episode, rvf_estimates
from .linear import LinearMethod, build_feature_mrp, run_linear_policy_eval
from .mrp import build_ychain, exact_values, sample_trajectory, ychain_states, ObservationMap

# hyperparameter defaults for the aliased chain
YCHAIN_LR_THETA = 0.5
YCHAIN_LR_OMEGA = 1.0
YCHAIN_LAMBDA = 0.9

METHOD_KEYS = {
    "ychain": {
        "td0": {"lr"},
        "td_lambda": {"lr", "lam"},
        "rtd": {"lr_theta", "lr_omega", "lam", "target", "mode", "truncation", "omega_grad", "gate",
                "reward_adjusted", "bootstrap", "lr_decay", "omega_init"},
        "ortd": {"lr_theta", "lam", "target", "mode", "truncation", "gate", "reward_adjusted", "bootstrap",
                 "lr_decay"},
    },
    "policy-eval": {
        "td0": {"lr"},
        "td_lambda": {"lr", "lam"},
        "rvf": {"lr", "lr_beta", "fixed_beta", "bootstrap"},
    },
}

ENV_KEYS = {
    "ychain": {"branch_len", "stem_len", "gamma"},
    "policy-eval": {"n_states", "k", "noise_level", "gamma", "env_seed"},
}


@dataclass
class RunCurve:
    checkpoints: np.ndarray
    values: np.ndarray
    diverged: bool = False
    message: str = ""


class YChainTask:
    """The aliased chain plus the paths used to score the aliased estimates."""

    def __init__(self, branch_len: int = 3, stem_len: int = 3, gamma: float = 0.9):
        self.mrp, self.obs_map = build_ychain(branch_len, gamma, stem_len)
        self.idx = ychain_states(branch_len, stem_len)
        self.values = exact_values(self.mrp)
        idx = self.idx
        stem = list(range(idx["S1"] + 1))
        top = stem + list(range(idx["S2"], idx["S4"] + 1))
        bottom = stem + list(range(idx["S3"], idx["S5"] + 1))
        self.paths = [np.array(top), np.array(bottom)]
        self.targets = [self.values[idx["S4"]], self.values[idx["S5"]]]
        self.aliased_obs = int(self.obs_map.obs_of_state[idx["S4"]])
        self._eye = np.eye(self.obs_map.n_obs)

    def oracle_beta(self) -> np.ndarray:
        """Emphasis 1 on the fork and first branch states, 0 elsewhere."""
        fb = np.zeros(self.obs_map.n_obs)
        for name in ("S1", "S2", "S3"):
            fb[self.obs_map.obs_of_state[self.idx[name]]] = 1.0
        return fb

    def aliased_error_table(self, theta: np.ndarray) -> float:
        v = theta[self.aliased_obs]
        return float(np.mean([abs(v - g) for g in self.targets]))

    def aliased_error_rvf(self, params: RvfParams, fixed_beta=None, reward_adjusted=False) -> float:
        errs = []
        for path, g in zip(self.paths, self.targets):
            obs = self.obs_map.obs_of_state[path]
            fb = None if fixed_beta is None else fixed_beta[obs]
            rewards = self.mrp.reward[path] if reward_adjusted else None
            vb = rvf_estimates(params, self._eye[obs], rewards, fixed_beta=fb, reward_adjusted=reward_adjusted)
            errs.append(abs(vb[-1] - g))
        return float(np.mean(errs))


def _target(params):
    kind = params.get("target", "lambda")
    lam = params.get("lam", YCHAIN_LAMBDA)
    if kind == "lambda":
        return TargetSpec.lambda_return(lam)
    if kind == "td0":
        return TargetSpec.td0()
    if kind == "mc":
        return TargetSpec.monte_carlo()
    if kind.startswith("nstep"):
        return TargetSpec.nstep(int(kind[5:] or 1))
    raise ValueError(f"unknown target {kind!r}")


def rtd_config(params: dict, fixed_beta=None) -> RtdConfig:
    return RtdConfig(
        target=_target(params),
        lr_theta=params.get("lr_theta", YCHAIN_LR_THETA),
        lr_omega=params.get("lr_omega", YCHAIN_LR_OMEGA),
        mode=params.get("mode", "trace"),
        truncation=params.get("truncation"),
        omega_grad=params.get("omega_grad", "recursive"),
        gate=params.get("gate", 0.0),
        fixed_beta=fixed_beta,
        reward_adjusted=params.get("reward_adjusted", False),
        bootstrap=params.get("bootstrap", "rvf"),
        lr_decay=params.get("lr_decay", 0.0),
    )


def run_ychain(kind: str, params: dict, task: YChainTask, episodes: int, rng: np.random.Generator,
               checkpoint_every: int = 10, episode_sink=None) -> RunCurve:
    """Aliased-observation absolute error after every ``checkpoint_every`` episodes.

    ``episode_sink`` (optional) receives each EpisodeReport.
    """
    n_obs = task.obs_map.n_obs
    marks = np.arange(checkpoint_every, episodes + 1, checkpoint_every)
    values = np.full(len(marks), np.nan)
    theta = np.zeros(n_obs)
    fixed = task.oracle_beta() if kind == "ortd" else None
    if kind in ("rtd", "ortd"):
        rparams = RvfParams.zeros(n_obs, params.get("omega_init", 0.0))
        cfg = rtd_config(params, fixed)
        cfg.validate()
        adjusted = cfg.reward_adjusted

        def step():
            return run_rtd_episode(task.mrp, task.obs_map, rparams, cfg, rng)

        def score():
            return task.aliased_error_rvf(rparams, fixed, adjusted)
    elif kind == "td0":
        lr = params.get("lr", YCHAIN_LR_THETA)

        def step():
            return td0_episode(task.mrp, task.obs_map, theta, lr, rng)

        def score():
            return task.aliased_error_table(theta)
    elif kind == "td_lambda":
        lr = params.get("lr", YCHAIN_LR_THETA)
        lam = params.get("lam", YCHAIN_LAMBDA)

        def step():
            return td_lambda_online_episode(task.mrp, task.obs_map, theta, lr, lam, rng)

        def score():
            return task.aliased_error_table(theta)
    else:
        raise ValueError(f"unknown Y-chain method {kind!r}")

    m = 0
    for ep in range(1, episodes + 1):
        try:
            rep = step()
        except DivergenceError as err:
            return RunCurve(marks, values, True, f"episode {ep}: {err}")
        if episode_sink is not None:
            episode_sink(ep - 1, rep)
        if m < len(marks) and ep == marks[m]:
            values[m] = score()
            m += 1
    return RunCurve(marks, values)


def linear_method(kind: str, params: dict, name: str) -> LinearMethod:
    kw = {k: v for k, v in params.items() if k in ("lr", "lam", "lr_beta", "fixed_beta", "bootstrap")}
    return LinearMethod(kind, name=name, **kw)


def run_policy_eval(methods: dict, env: dict, transitions: int, rng: np.random.Generator,
                    checkpoint_every: int = 250) -> dict:
    """All methods on one shared transition sample; returns name -> RunCurve."""
    mrp, feats = build_feature_mrp(env.get("n_states", 20), env.get("k", 4), env.get("env_seed", 0),
                                   env.get("noise_level", 0.5), env.get("gamma", 0.9))
    oracle = exact_values(mrp)
    states = sample_trajectory(mrp, ObservationMap.identity(mrp.n_states), rng, transitions + 1).states
    out = {}
    for name, meth in methods.items():
        try:
            marks, curve = run_linear_policy_eval(meth, mrp, feats, transitions, None, oracle, states=states,
                                                  checkpoint_every=checkpoint_every)
            out[name] = RunCurve(marks, curve)
        except DivergenceError as err:
            marks = np.arange(checkpoint_every, transitions + 1, checkpoint_every)
            out[name] = RunCurve(marks, np.full(len(marks), np.nan), True, str(err))
    return out
