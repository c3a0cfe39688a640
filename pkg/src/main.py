"""
Provides options via the command line to run retry-storm experiments.
* `run <config>`: run every variant and seed of a JSON scenario file
* `builtin <name>`: run a built-in experiment
    `storm-comparison`, `over-scaling`, `threshold-band`, `critical-transition`, `cost-heatmap`,
    `burst-ddos`, `overload-validation`, `mm1m-validation`, `backoff-delay`
    * `--param key=value`: override a built-in parameter (value decoded as JSON, repeatable)
* `sweep <config>`: run a scenario over a parameter grid
    * `--grid path=v1,v2,...`: dotted path into the scenario (repeatable)

* `--seed`: replace the seeds of the scenario / built-in
* `--out-dir`: output folder (default `../output`)
* `--jobs`: number of parallel runs
* `--format`: `csv` (data files and summary) or `summary` (summary only)
* `--check`: exit with code 3 when an acceptance check fails
* `--verbose`: debug logging

Exit codes: 0 success, 2 scenario or parameter error, 3 failed check.
"""

import argparse
import json
import logging
import os
import sys

from data import report as rp
from data.reader import ScenarioError, apply_overrides, load_scenario, parse_value
from tool.cost import relative_billing
from tool.experiments import BUILTINS, run_builtin, run_scenario, sweep

logger = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_CHECK = 2, 3


def parse_pairs(items, split_values=False):
    """`key=value` strings into a dict; values are decoded as JSON"""

    pairs = dict()

    for item in items or []:
        if "=" not in item:
            raise ScenarioError(f"expected key=value, got '{item}'")

        key, value = item.split("=", 1)

        if split_values:
            pairs[key] = [parse_value(v) for v in value.split(",")]
        else:
            pairs[key] = parse_value(value)

    return pairs


def scenario_summary(config, reports):
    """Per-variant metrics table, with relative billing when the scenario names a baseline"""

    rows = rp.metric_rows(reports)
    columns = ["variant", "seed", "retries_per_request", "rejection_rate", "mean_latency", "goodput",
               "final_capacity", "cost_total"]

    if config.baseline is not None:
        totals = dict()
        for r in reports:
            totals[r.variant] = totals.get(r.variant, 0.0) + r.metrics["cost_total"]

        try:
            billing = relative_billing(totals, config.baseline)
        except ValueError as err:
            raise ScenarioError(f"relative billing: {err}") from err

        for row in rows:
            row["billing_pct"] = billing[row["variant"]]
        columns.append("billing_pct")

    return rp.summary_table(f"{config.name} ({config.horizon:g}s)", columns, rows)


def command_run(args):
    config = load_scenario(args.config)

    if args.seed is not None:
        config = apply_overrides(config, {"seeds": [args.seed]})

    reports = run_scenario(config, jobs=args.jobs)
    out_dir = os.path.join(args.out_dir, config.name)
    summary = scenario_summary(config, reports)

    if args.format == "csv":
        rp.write_reports(reports, out_dir, config.outputs, config_document=config.model_dump(mode="json"))

    rp.write_summary(os.path.join(out_dir, "summary.txt"), summary)
    print(summary)

    return 0


def command_builtin(args):
    params = parse_pairs(args.param)

    if args.seed is not None:
        params["seeds"] = [args.seed]

    result = run_builtin(args.name, params, jobs=args.jobs)
    out_dir = os.path.join(args.out_dir, result.name)

    if args.format == "csv":
        for table, (columns, rows) in result.tables.items():
            rp.write_table(os.path.join(out_dir, f"{table}.csv"), columns, rows)

        checks = [{"check": name, "passed": int(ok)} for name, ok in result.checks.items()]
        rp.write_table(os.path.join(out_dir, "checks.csv"), ["check", "passed"], checks)

    checks = "\n".join(f"[{'pass' if ok else 'FAIL'}] {name}" for name, ok in result.checks.items())
    summary = f"{result.summary}\n\n{checks}"

    rp.write_summary(os.path.join(out_dir, "summary.txt"), summary)
    print(summary)

    if args.check and not result.passed:
        return EXIT_CHECK

    return 0


def command_sweep(args):
    config = load_scenario(args.config)
    grid = parse_pairs(args.grid, split_values=True)

    if not grid:
        raise ScenarioError("sweep needs at least one --grid path=v1,v2")

    if args.seed is not None:
        config = apply_overrides(config, {"seeds": [args.seed]})

    paths = sorted(grid)
    rows = []

    for point, reports in sweep(config, grid, jobs=args.jobs):
        for row in rp.metric_rows(reports):
            rows.append({**{p: canonical_value(point[p]) for p in paths}, **row})

    out_dir = os.path.join(args.out_dir, f"{config.name}-sweep")
    columns = paths + ["variant", "seed"] + rp.METRIC_COLUMNS

    if args.format == "csv":
        rp.write_table(os.path.join(out_dir, "sweep.csv"), columns, rows)

    summary = rp.summary_table(f"sweep {config.name}", paths + ["variant", "seed", "retries_per_request",
                                                                "rejection_rate", "cost_total"], rows)
    rp.write_summary(os.path.join(out_dir, "summary.txt"), summary)
    print(summary)

    return 0


def canonical_value(value):
    return value if isinstance(value, (int, float, str)) else json.dumps(value, sort_keys=True)


def build_parser():
    parser = argparse.ArgumentParser(description="Retry-storm simulator and analytics")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", type=str, default=os.path.join("..", "output"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--format", choices=["csv", "summary"], default="csv")
    parser.add_argument("--check", action="store_true", default=False)
    parser.add_argument("--verbose", action="store_true", default=False)

    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run")
    run.add_argument("config", type=str)

    builtin = sub.add_parser("builtin")
    builtin.add_argument("name", type=str, choices=sorted(BUILTINS))
    builtin.add_argument("--param", action="append", default=[])

    sweep_cmd = sub.add_parser("sweep")
    sweep_cmd.add_argument("config", type=str)
    sweep_cmd.add_argument("--grid", action="append", default=[])

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    commands = {"run": command_run, "builtin": command_builtin, "sweep": command_sweep}

    try:
        return commands[args.command](args)
    except ScenarioError as err:
        logger.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
