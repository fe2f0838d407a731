"""Multi-seed experiment orchestration, aggregation, CSV output and SVG plots.

Experiment specs are small TOML files::

    schema = 1
    experiment = "ychain"          # or "policy-eval"
    n_seeds = 20
    budget = 5000                  # episodes (ychain) or transitions (policy-eval)
    checkpoint_every = 10

    [env]
    gamma = 0.9

    [[methods]]
    id = "RTD(0)"
    kind = "rtd"
    lr_theta = 0.5

Unknown keys anywhere are rejected so that hyperparameter typos fail loudly.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .experiments import ENV_KEYS, METHOD_KEYS, RunCurve, YChainTask, linear_method, run_policy_eval, run_ychain

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1

RAW_COLUMNS = ("experiment", "method", "seed", "checkpoint", "value", "status")
AGGREGATE_COLUMNS = ("experiment", "method", "checkpoint", "n_seeds", "n_finite", "mean", "se", "lower",
                     "upper", "partial")

AXIS_LABELS = {
    "ychain": ("episodes", "aliased-state absolute error"),
    "policy-eval": ("transitions", "RMSVE"),
}

_TOP_KEYS = {"schema", "experiment", "title", "n_seeds", "budget", "checkpoint_every", "confidence", "seed",
             "out", "workers", "env", "methods"}


class ConfigError(ValueError):
    """Invalid or unreadable experiment specification."""


class SchemaError(ValueError):
    """Data handed to an emitter does not have the expected shape."""


@dataclass(frozen=True)
class MethodSpec:
    id: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentSpec:
    experiment: str
    methods: list
    n_seeds: int = 20
    budget: int = 5000
    env: dict = field(default_factory=dict)
    checkpoint_every: int = 10
    confidence: float = 0.68
    seed: int = 0
    out: str | None = None
    workers: int = 1
    title: str | None = None

    def validate(self) -> "ExperimentSpec":
        if self.experiment not in METHOD_KEYS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {sorted(METHOD_KEYS)}")
        for name, val, lo in (("n_seeds", self.n_seeds, 1), ("budget", self.budget, 1),
                              ("checkpoint_every", self.checkpoint_every, 1), ("workers", self.workers, 1)):
            if not isinstance(val, int) or isinstance(val, bool) or val < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {val!r}")
        if self.checkpoint_every > self.budget:
            raise ConfigError("checkpoint_every exceeds the budget")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError("confidence must lie in (0, 1)")
        extra = set(self.env) - ENV_KEYS[self.experiment]
        if extra:
            raise ConfigError(f"unknown env keys for {self.experiment}: {sorted(extra)}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        kinds = METHOD_KEYS[self.experiment]
        seen = set()
        for m in self.methods:
            if m.kind not in kinds:
                raise ConfigError(f"method {m.id!r}: unknown kind {m.kind!r} for {self.experiment} "
                                  f"(expected one of {sorted(kinds)})")
            bad = set(m.params) - kinds[m.kind]
            if bad:
                raise ConfigError(f"method {m.id!r}: unknown keys {sorted(bad)}")
            if m.id in seen:
                raise ConfigError(f"duplicate method id {m.id!r}")
            seen.add(m.id)
        return self

    @property
    def labels(self) -> tuple[str, str]:
        return AXIS_LABELS[self.experiment]


def spec_from_dict(data: dict) -> ExperimentSpec:
    extra = set(data) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema must be {SCHEMA_VERSION}, got {data.get('schema')!r}")
    if "experiment" not in data:
        raise ConfigError("missing 'experiment'")
    methods = []
    for i, m in enumerate(data.get("methods", [])):
        if not isinstance(m, dict) or "kind" not in m:
            raise ConfigError(f"methods[{i}] needs a 'kind'")
        params = {k: v for k, v in m.items() if k not in ("id", "kind")}
        methods.append(MethodSpec(str(m.get("id", m["kind"])), m["kind"], params))
    kw = {k: data[k] for k in ("n_seeds", "budget", "checkpoint_every", "confidence", "seed", "out", "workers",
                                "title") if k in data}
    env = data.get("env", {})
    if not isinstance(env, dict):
        raise ConfigError("'env' must be a table")
    return ExperimentSpec(data["experiment"], methods, env=dict(env), **kw).validate()


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}") from None
    except OSError as err:
        raise ConfigError(f"cannot read spec file {path}: {err}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return spec_from_dict(data)


def ychain_spec(n_seeds=20, episodes=5000, *, lr_theta=0.5, lr_omega=1.0, lam=0.9, td_lr=0.5, gamma=0.9,
                branch_len=3, stem_len=3, checkpoint_every=10, **kw) -> ExperimentSpec:
    """The four-method aliased-chain comparison."""
    methods = [
        MethodSpec("TD(0)", "td0", {"lr": td_lr}),
        MethodSpec(f"TD({lam:g})", "td_lambda", {"lr": td_lr, "lam": lam}),
        MethodSpec("RTD(0)", "rtd", {"lr_theta": lr_theta, "lr_omega": lr_omega, "lam": lam}),
        MethodSpec("O-RTD", "ortd", {"lr_theta": lr_theta, "lam": lam}),
    ]
    env = {"gamma": gamma, "branch_len": branch_len, "stem_len": stem_len}
    return ExperimentSpec("ychain", methods, n_seeds, episodes, env, checkpoint_every, **kw).validate()


def policy_eval_spec(n_seeds=40, transitions=5000, *, lr=0.005, lr_trace=0.0005, lr_beta=0.005, lam=0.9,
                     n_states=20, k=4, noise_level=0.5, gamma=0.9, env_seed=0, checkpoint_every=250,
                     **kw) -> ExperimentSpec:
    """Linear TD(0), TD(lambda) and RVF on the synthetic feature MRP."""
    methods = [
        MethodSpec("TD(0)", "td0", {"lr": lr}),
        MethodSpec(f"TD({lam:g})", "td_lambda", {"lr": lr_trace, "lam": lam}),
        MethodSpec("RVF", "rvf", {"lr": lr, "lr_beta": lr_beta}),
    ]
    env = {"n_states": n_states, "k": k, "noise_level": noise_level, "gamma": gamma, "env_seed": env_seed}
    return ExperimentSpec("policy-eval", methods, n_seeds, transitions, env, checkpoint_every, **kw).validate()


# ---------------------------------------------------------------- running

def _seed_rng(base: int, seed: int) -> np.random.Generator:
    return np.random.default_rng([base, seed])


def _ychain_job(args):
    method, env, budget, every, base, seed = args
    task = YChainTask(**env)
    return run_ychain(method.kind, method.params, task, budget, _seed_rng(base, seed), every)


def _policy_job(args):
    methods, env, budget, every, base, seed = args
    learners = {m.id: linear_method(m.kind, m.params, m.id) for m in methods}
    return run_policy_eval(learners, env, budget, _seed_rng(base, seed), every)


def _jobs(spec: ExperimentSpec):
    """(key, function, args) triples; keys are (method id or None, seed)."""
    base = spec.seed
    if spec.experiment == "ychain":
        for m in spec.methods:
            for s in range(spec.n_seeds):
                yield (m.id, s), _ychain_job, (m, spec.env, spec.budget, spec.checkpoint_every, base, s)
    else:
        for s in range(spec.n_seeds):
            yield (None, s), _policy_job, (spec.methods, spec.env, spec.budget, spec.checkpoint_every, base, s)


def _execute(spec: ExperimentSpec) -> dict:
    jobs = list(_jobs(spec))
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = [(key, pool.submit(fn, args)) for key, fn, args in jobs]
            done = [(key, fut.result()) for key, fut in futures]
    else:
        done = [(key, fn(args)) for key, fn, args in jobs]
    curves = {m.id: {} for m in spec.methods}
    for (mid, seed), result in done:
        if mid is None:
            for name, curve in result.items():
                curves[name][seed] = curve
        else:
            curves[mid][seed] = result
    return curves


@dataclass
class MethodAggregate:
    mean: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_finite: np.ndarray
    n_seeds: int
    diverged_seeds: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.diverged_seeds)


@dataclass
class AggregateResult:
    experiment: str
    checkpoints: np.ndarray
    methods: dict
    confidence: float = 0.68
    x_label: str = "checkpoint"
    y_label: str = "value"
    title: str = ""
    raw: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    @property
    def z(self) -> float:
        return z_value(self.confidence)

    @property
    def partial(self) -> bool:
        return any(m.partial for m in self.methods.values())

    @property
    def exit_code(self) -> int:
        return 3 if self.partial else 0


def z_value(confidence: float) -> float:
    """Two-sided normal quantile: the band half-width is ``z * SE``."""
    return NormalDist().inv_cdf(0.5 + confidence / 2.0)


def summarize(values: np.ndarray, confidence: float = 0.68):
    """Column-wise mean, standard error and band over seeds (rows), ignoring NaN.

    With a single finite seed the standard error is 0.
    """
    values = np.asarray(values, dtype=float)
    n_cols = values.shape[1]
    mean = np.full(n_cols, np.nan)
    se = np.full(n_cols, np.nan)
    n_fin = np.zeros(n_cols, dtype=int)
    for j in range(n_cols):
        col = values[:, j]
        col = col[np.isfinite(col)]
        n_fin[j] = len(col)
        if len(col) == 0:
            continue
        mean[j] = np.mean(col)
        se[j] = np.std(col, ddof=1) / math.sqrt(len(col)) if len(col) > 1 else 0.0
    half = z_value(confidence) * se
    return mean, se, mean - half, mean + half, n_fin


def aggregate_curves(spec: ExperimentSpec, curves: dict) -> AggregateResult:
    marks = None
    methods, raw, messages = {}, {}, []
    for m in spec.methods:
        runs = [curves[m.id][s] for s in range(spec.n_seeds)]
        marks = runs[0].checkpoints if marks is None else marks
        table = np.vstack([r.values for r in runs])
        raw[m.id] = table
        mean, se, lo, hi, n_fin = summarize(table, spec.confidence)
        diverged = [s for s, r in enumerate(runs) if r.diverged]
        messages += [f"{m.id} seed {s} diverged: {runs[s].message}" for s in diverged]
        methods[m.id] = MethodAggregate(mean, se, lo, hi, n_fin, spec.n_seeds, diverged)
    xl, yl = spec.labels
    return AggregateResult(spec.experiment, np.asarray(marks), methods, spec.confidence, xl, yl,
                           spec.title or spec.experiment, raw, messages)


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def raw_csv(result: AggregateResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for name, table in result.raw.items():
        diverged = set(result.methods[name].diverged_seeds)
        for seed, row in enumerate(table):
            status = "diverged" if seed in diverged else "ok"
            for x, v in zip(result.checkpoints, row):
                w.writerow((result.experiment, name, seed, int(x), _fmt(v), status))
    return buf.getvalue()


def aggregate_csv(result: AggregateResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for name, agg in result.methods.items():
        for j, x in enumerate(result.checkpoints):
            w.writerow((result.experiment, name, int(x), agg.n_seeds, int(agg.n_finite[j]), _fmt(agg.mean[j]),
                        _fmt(agg.se[j]), _fmt(agg.lower[j]), _fmt(agg.upper[j]), int(agg.partial)))
    return buf.getvalue()


def read_raw_csv(path_or_text) -> dict:
    """Parse a raw CSV back into ``{method: (checkpoints, seeds x checkpoints array)}``."""
    text = Path(path_or_text).read_text() if not str(path_or_text).startswith(RAW_COLUMNS[0]) else path_or_text
    rows = list(csv.DictReader(io.StringIO(text)))
    out = {}
    for name in dict.fromkeys(r["method"] for r in rows):
        mine = [r for r in rows if r["method"] == name]
        marks = sorted({int(r["checkpoint"]) for r in mine})
        seeds = sorted({int(r["seed"]) for r in mine})
        table = np.full((len(seeds), len(marks)), np.nan)
        col = {x: j for j, x in enumerate(marks)}
        for r in mine:
            table[int(r["seed"]), col[int(r["checkpoint"])]] = float(r["value"]) if r["value"] else np.nan
        out[name] = (np.array(marks), table)
    return out


def run_experiment(spec: ExperimentSpec, out_dir=None, plot: bool = False) -> AggregateResult:
    """Run every (method, seed) pair and write ``raw.csv`` / ``aggregate.csv``.

    Seed ``s`` draws from ``default_rng([spec.seed, s])``; within a seed every
    method sees the same random stream, so comparisons are paired.  Nothing
    is written when neither ``out_dir`` nor ``spec.out`` is set.
    """
    spec.validate()
    result = aggregate_curves(spec, _execute(spec))
    target = out_dir if out_dir is not None else spec.out
    if target is not None:
        target = Path(target)
        target.mkdir(parents=True, exist_ok=True)
        files = {"raw": target / "raw.csv", "aggregate": target / "aggregate.csv"}
        files["raw"].write_text(raw_csv(result))
        files["aggregate"].write_text(aggregate_csv(result))
        if plot:
            files["plot"] = target / "plot.svg"
            files["plot"].write_text(emit_plot(result))
        result.files = {k: str(v) for k, v in files.items()}
    return result


# ---------------------------------------------------------------- plotting

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def emit_plot(result: AggregateResult, style: dict | None = None) -> str:
    """SVG 1.1 line chart: one group per method holding a CI band and a mean line."""
    style = dict({"width": 640, "height": 400, "band_opacity": 0.2, "stroke_width": 1.5}, **(style or {}))
    x = np.asarray(result.checkpoints, dtype=float)
    if not result.methods or x.size == 0:
        raise SchemaError("nothing to plot: aggregate has no curves")
    for name, agg in result.methods.items():
        for part in ("mean", "lower", "upper"):
            if np.shape(getattr(agg, part)) != x.shape:
                raise SchemaError(f"{name}: {part} has length {np.size(getattr(agg, part))}, "
                                  f"expected {x.size}")
    W, H = style["width"], style["height"]
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = W - left - right, H - top - bottom
    ys = np.concatenate([np.concatenate([a.lower, a.upper, a.mean]) for a in result.methods.values()])
    ys = ys[np.isfinite(ys)]
    y_lo = min(0.0, float(ys.min())) if ys.size else 0.0
    y_hi = float(ys.max()) if ys.size else 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_hi += 0.05 * (y_hi - y_lo)
    x_lo, x_hi = float(x.min()), float(x.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0

    def px(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return top + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph

    def pts(xs, vs):
        return " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, vs))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{left + pw / 2:.2f}" y="{top / 2 + 5:.2f}" text-anchor="middle" font-size="14">'
        f'{_escape(result.title)}</text>',
        '<g class="axes" stroke="black" fill="none">',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/>',
        '</g>',
        '<g class="ticks" font-size="10">',
    ]
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{left - 4}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(t) + 3:.2f}" text-anchor="end">{t:g}</text>')
    out.append('</g>')
    out.append(f'<text class="xlabel" x="{left + pw / 2:.2f}" y="{H - 10}" text-anchor="middle" font-size="12">'
               f'{_escape(result.x_label)}</text>')
    out.append(f'<text class="ylabel" x="15" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 15 {top + ph / 2:.2f})">{_escape(result.y_label)}</text>')
    for i, (name, agg) in enumerate(result.methods.items()):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(agg.mean) & np.isfinite(agg.lower) & np.isfinite(agg.upper)
        xs = x[ok]
        band = pts(np.concatenate([xs, xs[::-1]]), np.concatenate([agg.upper[ok], agg.lower[ok][::-1]]))
        ly = top + 15 + 18 * i
        out += [
            f'<g class="method" data-method="{_escape(name)}">',
            f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="{style["band_opacity"]}" '
            f'stroke="none"/>',
            f'<polyline class="mean" points="{pts(xs, agg.mean[ok])}" fill="none" stroke="{color}" '
            f'stroke-width="{style["stroke_width"]}"/>',
            f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" '
            f'stroke-width="2"/>',
            f'<text x="{left + pw + 35}" y="{ly + 4}" font-size="11">{_escape(name)}'
            f'{" (partial)" if agg.partial else ""}</text>',
            '</g>',
        ]
    out.append('</svg>')
    return "\n".join(out) + "\n"


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
