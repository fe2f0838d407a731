"""Command-line entry point: ``rvf <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 configuration error (including a
missing spec file), 3 finished but at least one run diverged.
"""
from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from . import harness
from .mrp import ConstraintError
from .theory import ContractionConfig, certify_random_mrps, decompose_update, min_gating_threshold, value_bounds

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d,
                   help="base seed; run s uses default_rng([seed, s]) (0, or the spec file's seed)")
    p.add_argument("--out", default=d, help="output directory for CSV/SVG files")
    p.add_argument("--format", choices=("csv", "svg"), default=d if suppress else "csv",
                   help="csv writes raw/aggregate CSVs; svg also writes plot.svg")
    p.add_argument("--workers", type=int, default=d, help="parallel worker processes (1)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="rvf", description="Recurrent value function experiments and checks.",
                     formatter_class=fmt)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        _global_flags(p, suppress=True)
        return p

    p = add("ychain", "TD(0), TD(lambda), RTD(0) and O-RTD on the aliased Y-chain")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--episodes", type=int, default=5000, help="episodes per run")
    p.add_argument("--lr-theta", type=float, default=0.5, help="value learning rate")
    p.add_argument("--lr-omega", type=float, default=1.0, help="emphasis (beta) learning rate")
    p.add_argument("--lam", type=float, default=0.9, help="lambda for the return target and TD(lambda)")
    p.add_argument("--td-lr", type=float, default=0.5, help="learning rate of the TD baselines")
    p.add_argument("--gamma", type=float, default=0.9, help="discount")
    p.add_argument("--branch-len", type=int, default=3, help="non-terminal states per branch")
    p.add_argument("--stem-len", type=int, default=3, help="states before the fork")
    p.add_argument("--checkpoint-every", type=int, default=10, help="episodes between checkpoints")
    p.add_argument("--confidence", type=float, default=0.68, help="two-sided band level")

    p = add("policy-eval", "Linear TD(0), TD(lambda) and RVF on a synthetic feature MRP (RMSVE)")
    p.add_argument("--replicates", type=int, default=40, help="independent transition samples")
    p.add_argument("--transitions", type=int, default=5000, help="transitions per sample")
    p.add_argument("--lr", type=float, default=0.005, help="learning rate for TD(0) and RVF")
    p.add_argument("--lr-trace", type=float, default=0.0005, help="learning rate for TD(lambda)")
    p.add_argument("--lr-beta", type=float, default=0.005, help="emphasis learning rate")
    p.add_argument("--lam", type=float, default=0.9, help="trace decay")
    p.add_argument("--n-states", type=int, default=20, help="ring size")
    p.add_argument("--k", type=int, default=4, help="feature dimension")
    p.add_argument("--noise", type=float, default=0.5, help="distractor noise level")
    p.add_argument("--gamma", type=float, default=0.9, help="discount")
    p.add_argument("--env-seed", type=int, default=0, help="seed of the MRP and features")
    p.add_argument("--checkpoint-every", type=int, default=250, help="transitions between checkpoints")
    p.add_argument("--confidence", type=float, default=0.68, help="two-sided band level")

    p = add("theory", "Value bounds and minimal gating threshold for (gamma, D) combinations")
    p.add_argument("--gamma", type=float, nargs="+", default=[0.5], help="discount factor(s)")
    p.add_argument("--d", type=float, nargs="+", default=[0.8], help="emphasis lower bound(s) D")
    p.add_argument("--r-min", type=float, default=0.8, help="smallest reward")
    p.add_argument("--r-max", type=float, default=1.0, help="largest reward")

    p = add("decompose", "Split a recurrent estimate into V(s_i) - Delta_t(s_i)")
    p.add_argument("--betas", type=float, nargs="+", required=True, help="emphasis along the path")
    p.add_argument("--values", type=float, nargs="+", required=True, help="values along the path")
    p.add_argument("--i", type=int, default=1, help="1-based index of the decomposed state")

    p = add("certify", "Empirical contraction certificates on random chains")
    p.add_argument("--n-mrps", type=int, default=20, help="number of random chains")
    p.add_argument("--gamma", type=float, default=0.5, help="discount")
    p.add_argument("--d", type=float, default=0.8, help="emphasis lower bound D")
    p.add_argument("--c", type=float, default=0.35, help="gating threshold C")
    p.add_argument("--r-min", type=float, default=0.8, help="smallest reward")
    p.add_argument("--r-max", type=float, default=1.0, help="largest reward")
    p.add_argument("--pairs", type=int, default=20, help="random value pairs per chain")
    p.add_argument("--samples", type=int, default=4000, help="sampled paths per chain")
    p.add_argument("--horizon", type=int, default=8, help="transitions per path")

    p = add("run", "Run an experiment described by a TOML spec file")
    p.add_argument("spec", help="path to the spec file")
    return parser


def _report(result: harness.AggregateResult, out) -> int:
    last = result.checkpoints[-1]
    print(f"{result.experiment}: {result.y_label} at {result.x_label} = {int(last)} "
          f"(mean ± {result.confidence:.0%} band half-width, n = seeds)", file=out)
    for name, agg in result.methods.items():
        flag = "  PARTIAL" if agg.partial else ""
        print(f"  {name:<10} {agg.mean[-1]:.4f} ± {agg.upper[-1] - agg.mean[-1]:.4f}  "
              f"n={agg.n_seeds}{flag}", file=out)
    for msg in result.messages:
        print(f"  warning: {msg}", file=out)
    for kind, path in result.files.items():
        print(f"  wrote {kind}: {path}", file=out)
    return result.exit_code


def _run_spec(spec, args, out):
    spec.seed = args.seed if args.seed is not None else spec.seed
    spec.workers = args.workers or spec.workers
    out_dir = args.out if args.out is not None else spec.out
    result = harness.run_experiment(spec, out_dir or None, plot=args.format == "svg")
    return _report(result, out)


def _cmd_theory(args, out):
    rows = []
    for g, d in itertools.product(args.gamma, args.d):
        cfg = ContractionConfig(g, d, 0.0, args.r_min, args.r_max)
        try:
            cfg.check()
            assumption = "ok"
        except ConstraintError as err:
            assumption = f"violated ({err})"
        try:
            v_min, v_max = value_bounds(cfg)
        except ConstraintError:
            v_min = v_max = float("nan")
        try:
            c_min = min_gating_threshold(g, d)
            feasible = "yes" if assumption == "ok" else "no"
        except ConstraintError:
            c_min, feasible = float("nan"), "no"
        rows.append((g, d, v_min, v_max, c_min, feasible, assumption))
    print(f"{'gamma':>6} {'D':>6} {'V_min':>9} {'V_max':>9} {'C_min':>8}  feasible  assumption", file=out)
    for g, d, lo, hi, c, f, a in rows:
        print(f"{g:>6g} {d:>6g} {lo:>9.5f} {hi:>9.5f} {c:>8.4f}  {f:<8}  {a}", file=out)
    return EXIT_OK


def _cmd_decompose(args, out):
    try:
        rep = decompose_update(args.betas, args.values, args.i)
    except ValueError as err:
        raise ConstraintError(str(err)) from None
    print(f"C_t(s_i) = {rep.c_t:.12g}", file=out)
    print(f"V~_t(s_i) = {rep.v_tilde:.12g}", file=out)
    print(f"Delta_t(s_i) = {rep.delta:.12g}", file=out)
    print(f"V^beta(s_t) = {rep.v_beta:.12g}", file=out)
    print(f"V(s_i) - Delta = {args.values[args.i - 1] - rep.delta:.12g}", file=out)
    return EXIT_OK


def _cmd_certify(args, out):
    cfg = ContractionConfig(args.gamma, args.d, args.c, args.r_min, args.r_max)
    reports = certify_random_mrps(cfg, args.n_mrps, args.seed or 0, n_pairs=args.pairs, n_samples=args.samples,
                                  horizon=args.horizon)
    print(f"{'mrp':>4} {'max_ratio':>10} {'bound':>7} {'slack':>8} {'worst_dir':>10}  result", file=out)
    for j, r in enumerate(reports):
        print(f"{j:>4} {r.max_ratio:>10.4f} {r.bound:>7.3f} {r.slack:>8.4f} {r.worst_case_modulus:>10.4f}  "
              f"{'pass' if r.passed else 'FAIL'}", file=out)
    ok = all(r.passed for r in reports)
    print(f"{sum(r.passed for r in reports)}/{len(reports)} certified", file=out)
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "certify.csv", "w") as fh:
            fh.write("mrp,max_ratio,bound,slack,worst_case_modulus,passed\n")
            for j, r in enumerate(reports):
                fh.write(f"{j},{r.max_ratio!r},{r.bound!r},{r.slack!r},{r.worst_case_modulus!r},{int(r.passed)}\n")
    return EXIT_OK if ok else EXIT_PARTIAL


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for name, default in (("seed", None), ("out", None), ("format", "csv"), ("workers", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        if args.command == "ychain":
            spec = harness.ychain_spec(
                args.seeds, args.episodes, lr_theta=args.lr_theta, lr_omega=args.lr_omega, lam=args.lam,
                td_lr=args.td_lr, gamma=args.gamma, branch_len=args.branch_len, stem_len=args.stem_len,
                checkpoint_every=args.checkpoint_every, confidence=args.confidence)
            return _run_spec(spec, args, out)
        if args.command == "policy-eval":
            spec = harness.policy_eval_spec(
                args.replicates, args.transitions, lr=args.lr, lr_trace=args.lr_trace, lr_beta=args.lr_beta,
                lam=args.lam, n_states=args.n_states, k=args.k, noise_level=args.noise, gamma=args.gamma,
                env_seed=args.env_seed, checkpoint_every=args.checkpoint_every, confidence=args.confidence)
            return _run_spec(spec, args, out)
        if args.command == "run":
            spec = harness.load_spec(args.spec)
            return _run_spec(spec, args, out)
        if args.command == "theory":
            return _cmd_theory(args, out)
        if args.command == "decompose":
            return _cmd_decompose(args, out)
        if args.command == "certify":
            return _cmd_certify(args, out)
    except (harness.ConfigError, ConstraintError) as err:
        print(f"rvf: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"rvf: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
