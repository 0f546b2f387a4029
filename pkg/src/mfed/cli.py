"""Command-line front end.

Subcommands:
  run         execute a configured experiment (local / fedavg / mfed)
  compare     side-by-side summary of completed runs against the first
  rate-check  run the convex convergence harness and verify the rate bound
  plotdata    turn a run directory into plot-ready text files and figures

Standard output stays human-readable; all machine-readable data goes to
files. Exit codes: 0 ok, 2 configuration/usage error, 3 runtime divergence,
4 rate-check failure. Set MFED_LOG=debug|info|warning for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import (ConfigError, load_experiment_config, load_rate_config)
from .convergence import (RateSpec, check_rate, default_suite, fit_rate_constant,
                          inverse_t, run_convex_mfed, write_rate_report)
from .errors import DivergenceError
from .evaluation import delta_m_percent, is_better
from .server import read_summary, run_experiment

log = logging.getLogger("mfed")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_RATE_FAILED = 4


def _setup_logging() -> None:
    level = os.environ.get("MFED_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfed", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured experiment")
    run_p.add_argument("--config", required=True, help="YAML experiment config")
    _common_flags(run_p)

    cmp_p = sub.add_parser("compare", help="compare completed run directories")
    cmp_p.add_argument("dirs", nargs="+", help="run directories (first is the baseline)")
    _common_flags(cmp_p)

    rate_p = sub.add_parser("rate-check", help="convex convergence harness")
    rate_p.add_argument("--config", required=True, help="YAML convex-suite config")
    _common_flags(rate_p)

    plot_p = sub.add_parser("plotdata", help="emit plot data files and figures")
    plot_p.add_argument("run_dir", help="completed run directory")
    _common_flags(plot_p)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="client-training threads")
    p.add_argument("--out", default=None, help="output directory override")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "rate-check":
            return _cmd_rate_check(args)
        return _cmd_plotdata(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def _cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        config.threads = args.threads
    out_dir = args.out or config.out_dir
    if out_dir is None:
        raise ConfigError("out_dir", "missing (set out_dir in the config or pass --out)")
    result = run_experiment(config, out_dir)
    print(f"mode={config.mode} seed={config.seed} rounds={config.T} "
          f"out={result.out_dir}")
    _print_summary_table(config, result.summary)
    print(f"mean delta_m: {result.mean_delta_m:+.2f}%")
    return EXIT_OK


def _print_summary_table(config, summary_rows) -> None:
    kinds = {t.task_id: (t.kind, t.metric) for t in config.tasks}
    print(f"{'task':<6}{'kind':<14}{'metric':<10}{'best':>12}{'final':>12}{'delta_m%':>10}")
    for row in summary_rows:
        kind, metric = kinds[row["task_id"]]
        print(f"{row['task_id']:<6}{kind:<14}{metric:<10}"
              f"{row['best_metric']:>12.6f}{row['final_metric']:>12.6f}"
              f"{row['delta_m_percent']:>+10.2f}")


def _cmd_compare(args) -> int:
    if len(args.dirs) < 2:
        print("compare needs at least two run directories", file=sys.stderr)
        return EXIT_CONFIG
    runs = []
    for d in args.dirs:
        d = Path(d)
        summary_path = d / "summary.csv"
        config_path = d / "config.yaml"
        if not summary_path.exists():
            raise ConfigError("<run dir>", f"missing {summary_path}")
        if not config_path.exists():
            raise ConfigError("<run dir>", f"missing {config_path}")
        with open(config_path) as fh:
            cfg = yaml.safe_load(fh)
        tasks = {t["task_id"]: t for t in cfg["tasks"]}
        runs.append({"dir": d, "mode": cfg["mode"], "tasks": tasks,
                     "summary": read_summary(summary_path)})
    base_tasks = runs[0]["tasks"]
    for r in runs[1:]:
        if {k: (v["kind"], v["metric"]) for k, v in r["tasks"].items()} != \
                {k: (v["kind"], v["metric"]) for k, v in base_tasks.items()}:
            raise ConfigError("<run dir>", f"{r['dir']} has a different task set "
                                           "than the baseline run")
    task_ids = sorted(base_tasks)
    metrics = {k: base_tasks[k]["metric"] for k in task_ids}
    best_per_task = {}
    for k in task_ids:
        best = runs[0]["summary"][k]["best_metric"]
        for r in runs[1:]:
            v = r["summary"][k]["best_metric"]
            if is_better(v, best, metrics[k]):
                best = v
        best_per_task[k] = best

    header = f"{'run':<24}{'mode':<8}"
    for k in task_ids:
        header += f"{f'task{k}({metrics[k]})':>18}"
    header += f"{'delta_m%':>10}"
    print(header)
    base = runs[0]["summary"]
    for r in runs:
        row = f"{r['dir'].name:<24}{r['mode']:<8}"
        deltas = []
        for k in task_ids:
            v = r["summary"][k]["best_metric"]
            mark = "*" if v == best_per_task[k] else ""
            row += f"{f'{v:.6f}{mark}':>18}"
            deltas.append(delta_m_percent(v, base[k]["best_metric"], metrics[k]))
        row += f"{np.mean(deltas):>+10.2f}"
        print(row)
    return EXIT_OK


def _cmd_rate_check(args) -> int:
    config = load_rate_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if config.T < 50:
        print("usage error: rate-check needs T >= 50", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or config.out_dir or "rate-check")
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = default_suite(config.seed, config.num_tasks, config.dim, config.mu,
                          config.start_radius)
    a_const = config.rate_a if config.rate_a is not None else \
        fit_rate_constant(inverse_t, config.T)
    rate = RateSpec(a_const)
    try:
        check_runs = [("deterministic", run_convex_mfed(
            tasks, rate, config.T, lam=config.lam, seed=config.seed,
            eta_override=config.eta))]
        if config.noise > 0:
            check_runs.append(("stochastic", run_convex_mfed(
                tasks, rate, config.T, lam=config.lam, noise_bound=config.noise,
                draws=config.draws, seed=config.seed, eta_override=config.eta)))
    except ValueError as exc:
        raise ConfigError("rate", str(exc)) from exc
    all_passed = True
    from .plots import render_rate_figure
    for name, distances in check_runs:
        result = check_rate(distances, rate)
        write_rate_report(out_dir / f"rate_{name}.csv", distances, rate)
        ts = list(range(config.T))
        render_rate_figure(ts, [rate.g(t) for t in ts], distances,
                           out_dir / f"rate_{name}.png")
        status = "pass" if result.passed else "FAIL"
        print(f"{name}: C_fit={result.c_fit:.4g} early={result.early_max:.4g} "
              f"late={result.late_max:.4g} -> {status}")
        all_passed = all_passed and result.passed
    print(f"A={a_const:.6g} report written to {out_dir}")
    return EXIT_OK if all_passed else EXIT_RATE_FAILED


def _cmd_plotdata(args) -> int:
    run_dir = Path(args.run_dir)
    rounds_path = run_dir / "rounds.jsonl"
    if not rounds_path.exists():
        raise ConfigError("<run dir>", f"missing {rounds_path}")
    records = []
    with open(rounds_path) as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    if not records:
        raise ConfigError("<run dir>", f"{rounds_path} holds no rounds")
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    task_ids = sorted(records[0]["task_metrics"], key=int)
    labels = {k: f"task{k}" for k in task_ids}
    config_path = run_dir / "config.yaml"
    if config_path.exists():
        with open(config_path) as fh:
            cfg = yaml.safe_load(fh)
        labels = {str(t["task_id"]): f"task{t['task_id']}({t['metric']})"
                  for t in cfg["tasks"]}

    with open(out_dir / "metrics.dat", "w") as fh:
        fh.write("# round " + " ".join(f"metric_task_{k}" for k in task_ids) + "\n")
        for rec in records:
            vals = " ".join(repr(rec["task_metrics"][k]) for k in task_ids)
            fh.write(f"{rec['round']} {vals}\n")
    with open(out_dir / "drift.dat", "w") as fh:
        fh.write("# round lambda mean_drift\n")
        for rec in records:
            fh.write(f"{rec['round']} {rec['lambda']!r} "
                     f"{float(np.mean(rec['per_client_drift']))!r}\n")

    from .plots import render_drift_figure, render_metrics_figure
    rounds = [rec["round"] for rec in records]
    series = {labels[k]: [rec["task_metrics"][k] for rec in records]
              for k in task_ids}
    render_metrics_figure(rounds, series, out_dir / "metrics.png")
    render_drift_figure(rounds, [rec["lambda"] for rec in records],
                        [float(np.mean(rec["per_client_drift"])) for rec in records],
                        out_dir / "drift.png")
    print(f"wrote metrics.dat, drift.dat and figures to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
