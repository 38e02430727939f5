"""Command-line entry point: ``ohtes run | prop1 | stats``.

``run`` executes one training run and writes progress.csv / checkpoint.
``prop1`` sweeps the gradient-estimator check over a sigma x N grid.
``stats`` aggregates several runs into normalized-score statistics.
``OHT_ES_THREADS`` caps worker parallelism (population rollouts).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import seeds
from .config import RunConfig, parse_config_file, set_key
from .harness import (
    Prop1Problem,
    ScoreTable,
    aggregate_stats,
    normalized_score,
    prop1_check,
)
from .runner import fmt, run


def _build_run_config(args) -> RunConfig:
    config = RunConfig()
    if args.config:
        config = parse_config_file(args.config, config)
    for key, value in (
        ("algo", args.algo),
        ("env", args.env),
        ("delay", args.delay),
        ("total_steps", args.steps),
        ("seed", args.seed),
        ("out", args.out),
    ):
        if value is not None:
            set_key(config, key, str(value))
    return config


def cmd_run(args) -> int:
    try:
        config = _build_run_config(args)
    except (ValueError, OSError) as err:
        print(f"invalid config: {err}")
        return 2
    return run(config)


DEFAULT_PROP1_PROBLEM = Prop1Problem(
    a_mat=np.array([[2.0]]), b=np.array([0.0]), psi=np.array([0.0]), g=np.array([1.0]), mu=1.0
)


def cmd_prop1(args) -> int:
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    samples = [int(s) for s in args.samples.split(",") if s.strip()]
    if not sigmas or not samples:
        print("invalid config: need at least one sigma and one sample count")
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, sigma in enumerate(sigmas):
        for j, n in enumerate(samples):
            rng = seeds.stream_gen(args.seed, "tuner", i, j)
            res = prop1_check(DEFAULT_PROP1_PROBLEM, sigma, n, rng)
            rows.append([sigma, n, res.es_estimate, res.analytic, res.relative_error, res.stderr])
    with open(out_dir / "prop1.csv", "w", newline="\n") as fh:
        fh.write("sigma,n,es_mean,analytic,rel_err,stderr\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return 0


def _run_label(run_dir: Path, env_name: str) -> str:
    """Directory basename, or the parent name for <label>/<env>/ layouts."""
    base = run_dir.name
    if base == env_name and run_dir.parent.name:
        return run_dir.parent.name
    return base


def _read_progress(run_dir: Path):
    cfg = {}
    for line in (run_dir / "config.txt").read_text().splitlines():
        if "=" in line:
            key, _, val = line.partition("=")
            cfg[key.strip()] = val.strip()
    steps, returns = [], []
    with open(run_dir / "progress.csv") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            steps.append(int(row["step"]))
            returns.append(float(row["eval_return"]))
    return cfg["env"], np.asarray(steps), np.asarray(returns)


def cmd_stats(args) -> int:
    anchors = json.loads(Path(args.anchors).read_text())
    runs = []
    for d in args.run_dirs:
        run_dir = Path(d)
        try:
            env_name, steps, returns = _read_progress(run_dir)
        except (OSError, KeyError) as err:
            print(f"cannot read run {d}: {err}")
            return 2
        runs.append((_run_label(run_dir, env_name), env_name, steps, returns, d))
    ticks = runs[0][2]
    ragged = [d for _, _, s, _, d in runs if not np.array_equal(s, ticks)]
    if ragged:
        print("tick misalignment in runs: " + ", ".join(ragged))
        return 2
    algos = list(dict.fromkeys(label for label, *_ in runs))
    tasks = list(dict.fromkeys(env for _, env, *_ in runs))
    missing_anchor = [t for t in tasks if t not in anchors]
    if missing_anchor:
        print("missing anchors for tasks: " + ", ".join(missing_anchor))
        return 2
    scores = np.full((len(algos), len(tasks), ticks.size), np.nan)
    for label, env_name, _, returns, d in runs:
        i, j = algos.index(label), tasks.index(env_name)
        if not np.all(np.isnan(scores[i, j])):
            print(f"duplicate (algorithm, task) cell from run {d}")
            return 2
        low, high = anchors[env_name]["low"], anchors[env_name]["high"]
        scores[i, j] = [normalized_score(r, low, high) for r in returns]
    holes = np.argwhere(np.isnan(scores[:, :, 0]))
    if holes.size:
        missing = ", ".join(f"({algos[i]}, {tasks[j]})" for i, j in holes)
        print(f"missing (algorithm, task) cells: {missing}")
        return 2
    table = ScoreTable(
        scores=scores,
        low=np.array([anchors[t]["low"] for t in tasks]),
        high=np.array([anchors[t]["high"] for t in tasks]),
        ticks=ticks,
        algos=tuple(algos),
        tasks=tuple(tasks),
    )
    mean, median, best_ratio = aggregate_stats(table)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as fh:
        fh.write("tick,algo,mean,median,best_ratio\n")
        for t in range(ticks.size):
            for i, label in enumerate(algos):
                fh.write(
                    ",".join(
                        [fmt(int(ticks[t])), label, fmt(mean[i, t]), fmt(median[i, t]), fmt(best_ratio[i, t])]
                    )
                    + "\n"
                )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ohtes", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    p_run.add_argument("--config", default=None, help="key=value config file")
    p_run.add_argument("--algo", default=None)
    p_run.add_argument("--env", default=None)
    p_run.add_argument("--delay", type=int, default=None)
    p_run.add_argument("--steps", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_prop = sub.add_parser("prop1", help="gradient-estimator verification sweep")
    p_prop.add_argument("--sigmas", default="0.1,0.01,0.001")
    p_prop.add_argument("--samples", default="1000000")
    p_prop.add_argument("--seed", type=int, default=0)
    p_prop.add_argument("--out", default="runs/prop1")
    p_prop.set_defaults(func=cmd_prop1)

    p_stats = sub.add_parser("stats", help="normalized-score statistics over runs")
    p_stats.add_argument("run_dirs", nargs="+")
    p_stats.add_argument("--anchors", required=True)
    p_stats.add_argument("--out", default="stats.csv")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
