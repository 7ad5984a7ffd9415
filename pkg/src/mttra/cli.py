"""Command-line entry point: ``mttra {simulate,metrics,verify-bounds,report}``.

Exit codes: 0 success, 1 metric or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bounds_verifier as bv
from . import plotdata
from .drift_source import Corpus, DriftConfig, default_corpus, load_query_pool
from .latency_model import load_profiles, default_profiles
from .metrics import UndefinedMetricError, build_report
from .reflex_engine import PolicyConfig, SimulationSetup, StableInterval, run_experiment
from .telemetry import ReflexMode, TelemetryError, episodes_from_events, read_events, save_events

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

PROFILE_HELP = """\
profile override file: one line per mode,
  <mode> median=<s> std=<s> [detect=<frac>] [decide=<frac>] [execute=<frac>]
split fractions default to 0.15/0.05/0.80; '#' starts a comment."""


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _open_interval(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return value


def _tau(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mttra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate",
        help="run the reasoning/drift/recovery simulation and write JSONL telemetry",
        epilog=PROFILE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sim.add_argument("--runs", type=_positive_int, default=200)
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--tau-drift", type=_tau, default=0.6)
    sim.add_argument("--perturbation-prob", type=_unit_interval, default=0.35)
    sim.add_argument("--tool-error-share", type=_unit_interval, default=2 / 3,
                     help="share of injected faults that are tool errors (rest: low confidence)")
    sim.add_argument("--rollback-weight", type=_unit_interval, default=0.32,
                     help="probability that a drift fault is handled by rollback rather than auto-replan")
    sim.add_argument("--no-human-gate", action="store_true", help="route low-confidence faults to auto-replan")
    sim.add_argument("--agents", type=_positive_int, default=1)
    sim.add_argument("--cycles-per-run", type=_positive_int, default=1,
                     help="completed fault/recovery cycles per agent per run")
    sim.add_argument("--stable-mean", type=float, default=StableInterval.mean)
    sim.add_argument("--stable-std", type=float, default=StableInterval.std)
    sim.add_argument("--corpus", type=Path, help="one document per line (default: bundled corpus)")
    sim.add_argument("--queries", type=Path, help="one query per line (default: built-in pool)")
    sim.add_argument("--profiles", type=Path, help="latency profile overrides (format below)")
    sim.add_argument("--jobs", type=_positive_int, default=1)
    sim.add_argument("--out", type=Path, default=Path("telemetry.jsonl"))

    met = sub.add_parser("metrics", help="compute the reliability report from telemetry")
    met.add_argument("input", type=Path)
    met.add_argument("--alpha", type=_open_interval, default=0.9)
    met.add_argument("--format", choices=("json", "csv"), default="json")
    met.add_argument("--aggregation", choices=("macro", "pooled"), default="macro")
    met.add_argument("--run-start", type=float, default=0.0)
    met.add_argument("--out", type=Path, help="write here instead of standard output")

    ver = sub.add_parser("verify-bounds", help="Monte-Carlo check of the uptime bounds")
    ver.add_argument("--seed", type=int, default=42)
    ver.add_argument("--grid-size", type=_positive_int, default=10)
    ver.add_argument("--max-product", type=float, default=2.0, help="largest lambda*mu on the grid")
    ver.add_argument("--point", action="append", metavar="LAMBDA,MU",
                     help="check this (lambda, mu) instead of the grid; repeatable")
    ver.add_argument("--cycles", type=float, default=1e5, help="renewal horizon in mean cycles")
    ver.add_argument("--rel-tol", type=float, default=0.01)
    ver.add_argument("--alphas", type=lambda s: [_open_interval(x) for x in s.split(",")],
                     default=list(bv.DEFAULT_ALPHAS))
    ver.add_argument("--trials", type=_positive_int, default=100_000)
    ver.add_argument("--mu", type=float, default=6.21)
    ver.add_argument("--sigma", type=float, default=2.14)
    ver.add_argument("--mtbf", type=float, default=6.73)
    ver.add_argument("--factor", choices=("k-alpha", "cantelli"), default="k-alpha",
                     help="k-alpha: sqrt((1-a)/a) as in the NRR_alpha definition; "
                          "cantelli: sqrt(a/(1-a)), the factor Cantelli's inequality needs")
    ver.add_argument("--theorem", choices=("1", "2", "both"), default="both")
    ver.add_argument("--out", type=Path, help="CSV output path (default: standard output)")
    ver.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)

    rep = sub.add_parser("report", help="write plot-ready CSV series from telemetry")
    rep.add_argument("input", type=Path)
    rep.add_argument("--out-dir", type=Path, default=Path("report"))
    rep.add_argument("--bins", type=_positive_int, default=20)
    rep.add_argument("--window", type=_positive_int, default=20)
    return parser


def _err(msg: str) -> None:
    print(f"mttra: error: {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    corpus = Corpus.from_file(args.corpus) if args.corpus else default_corpus()
    profiles = load_profiles(args.profiles) if args.profiles else default_profiles()
    w = args.rollback_weight
    setup = SimulationSetup(
        corpus=corpus,
        queries=load_query_pool(args.queries),
        drift=DriftConfig(args.tau_drift, args.perturbation_prob, args.tool_error_share),
        policy=PolicyConfig(
            drift_branch_weights={ReflexMode.AUTO_REPLAN: 1.0 - w, ReflexMode.ROLLBACK: w},
            human_gate_enabled=not args.no_human_gate,
        ),
        profiles=profiles,
        stable=StableInterval(args.stable_mean, args.stable_std),
    )
    result = run_experiment(
        args.runs, args.seed, setup, n_agents=args.agents, episodes_per_run=args.cycles_per_run, jobs=args.jobs
    )
    try:
        n_events = save_events(result.events, args.out)
    except OSError as exc:
        _err(f"cannot write {args.out}: {exc.strerror or exc}")
        return EXIT_FAIL
    print(f"runs={result.n_runs} episodes={len(result.outcomes)} events={n_events} out={args.out}")
    for mode, count in result.mode_counts.items():
        print(f"  {mode.value:<14} {count}")
    print(f"elapsed_wall_s={result.elapsed_s:.3f}")
    return EXIT_OK


def _load_episodes(path: Path):
    seg = episodes_from_events(read_events(path))
    if seg.incomplete:
        print(f"mttra: warning: {seg.incomplete} incomplete episode(s) excluded", file=sys.stderr)
    return seg


def cmd_metrics(args) -> int:
    seg = _load_episodes(args.input)
    report = build_report(
        seg.episodes, run_start=args.run_start, alpha=args.alpha, aggregation=args.aggregation,
        incomplete=seg.incomplete,
    )
    text = report.to_json() + "\n" if args.format == "json" else report.to_csv()
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.point:
        try:
            grid = [tuple(float(v) for v in p.split(",")) for p in args.point]
        except ValueError:
            _err("--point expects LAMBDA,MU")
            return EXIT_USAGE
    else:
        grid = bv.default_grid(args.grid_size, args.max_product)

    t1 = []
    if args.theorem in ("1", "both"):
        t1 = bv.check_theorem1(grid, rng, cycles=args.cycles, rel_tol=args.rel_tol, _flip=args.inject_bug)
    t2 = []
    if args.theorem in ("2", "both"):
        factor = bv.cantelli_factor if args.factor == "cantelli" else None
        for dist in bv.theorem2_families(args.mu, args.sigma):
            kwargs = {"factor": factor} if factor else {}
            t2 += bv.check_theorem2(dist, 1.0 / args.mtbf, args.alphas, args.trials, rng, **kwargs)

    text = bv.verification_csv(t1, t2)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)

    failed = [r for r in t1 if not r.passed] + [r for r in t2 if not r.passed]
    if failed:
        _err(f"{len(failed)} verification row(s) failed:")
        for r in failed:
            if isinstance(r, bv.Theorem1Row):
                desc = f"theorem1 lambda={r.lam:.4g} mu={r.mu:.4g} pi={r.uptime:.6f} nrr={r.nrr:.6f} empirical={r.empirical:.6f}"
            else:
                desc = f"theorem2 {r.family} alpha={r.alpha} k={r.k:.4f} coverage={r.coverage:.5f} ({r.status})"
            print(f"  {desc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_report(args) -> int:
    episodes = _load_episodes(args.input).episodes
    if not episodes:
        raise UndefinedMetricError("no completed episodes; nothing to report")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "histogram.csv": plotdata.to_csv(plotdata.histogram(episodes, args.bins), ("bin_left", "bin_right", "count")),
        "mode_boxplot.csv": plotdata.to_csv(
            plotdata.box_summaries(episodes), ("mode", "min", "q1", "median", "q3", "max", "count")
        ),
        "rolling.csv": plotdata.to_csv(
            plotdata.rolling(episodes, args.window), ("index", "run_id", "rolling_mean", "rolling_median")
        ),
        "phase_means.csv": plotdata.to_csv(
            plotdata.phase_means(episodes), ("mode", "count", "mean_detect", "mean_decide", "mean_execute")
        ),
    }
    for name, text in files.items():
        (args.out_dir / name).write_text(text, encoding="utf-8")
        print(args.out_dir / name)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "metrics": cmd_metrics, "verify-bounds": cmd_verify, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (TelemetryError, UndefinedMetricError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    except FileNotFoundError as exc:
        _err(f"{exc.filename}: no such file")
        return EXIT_USAGE
    except OSError as exc:
        _err(f"{exc.filename or ''}: {exc.strerror or exc}")
        return EXIT_FAIL
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
