"""
Report writers.
 * CSV data files with fixed column sets, one row per (variant, seed, ...).
 * Plain-text summary table, also printed by the command line.
"""

import csv
import json
import os

METRIC_COLUMNS = ["retries_per_request", "rejection_rate", "rejection_prob", "mean_latency", "goodput",
                  "offered_rate", "fresh", "arrived", "succeeded", "failed", "in_system", "final_capacity",
                  "peak_capacity", "cost_upstream", "cost_downstream", "cost_total", "cost_burst", "cost_fresh"]

TRAJECTORY_COLUMNS = ["time", "capacity", "replicas", "fresh_rate", "offered_rate", "rejection_rate",
                      "retry_rate", "held", "retries_enabled", "spend_upstream", "spend_downstream"]


def write_table(path, columns, rows):
    """Write dict rows under a fixed header; missing keys are an error"""

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="raise", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})

    return path


def metric_rows(reports):
    return [{"scenario": r.scenario, "variant": r.variant, "seed": r.seed, **r.metrics} for r in reports]


def write_reports(reports, out_dir, outputs, config_document=None):
    """Write the requested data files for a set of run reports; returns written paths"""

    written = []
    keys = ["variant", "seed"]

    if "metrics" in outputs:
        path = os.path.join(out_dir, "metrics.csv")
        written.append(write_table(path, ["scenario"] + keys + METRIC_COLUMNS, metric_rows(reports)))

    if "stages" in outputs:
        rows = [{"variant": r.variant, "seed": r.seed, "stage": i, "rate": rate}
                for r in reports for i, rate in enumerate(r.stage_rates)]
        written.append(write_table(os.path.join(out_dir, "stages.csv"), keys + ["stage", "rate"], rows))

    if "trajectories" in outputs:
        rows = [{"variant": r.variant, "seed": r.seed, **row} for r in reports for row in r.trajectories]
        written.append(write_table(os.path.join(out_dir, "trajectories.csv"), keys + TRAJECTORY_COLUMNS, rows))

    if "costs" in outputs:
        rows = [{"variant": r.variant, "seed": r.seed, "service": service, "component": component, "amount": amount}
                for r in reports for service, breakdown in r.costs.items()
                for component, amount in sorted(breakdown.items())]
        written.append(write_table(os.path.join(out_dir, "costs.csv"),
                                   keys + ["service", "component", "amount"], rows))

    if "transitions" in outputs:
        rows = [{"variant": r.variant, "seed": r.seed, "time": t, "mode": mode}
                for r in reports for t, mode in r.transitions]
        written.append(write_table(os.path.join(out_dir, "transitions.csv"), keys + ["time", "mode"], rows))

    if config_document is not None:
        path = os.path.join(out_dir, "config.json")
        with open(path, "w") as f:
            json.dump(config_document, f, indent=2, sort_keys=True)
        written.append(path)

    return written


def summary_table(title, columns, rows, fmt="{:.4f}"):
    """Fixed-width text table"""

    cells = [[fmt.format(v) if isinstance(v, float) else str(v) for v in (row[c] for c in columns)] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]

    lines = [f"#### {title}", "  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells)

    return "\n".join(lines)


def write_summary(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    with open(path, "w") as lg:
        lg.write(text + "\n")

    return path
