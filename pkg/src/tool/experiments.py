"""
Scenario runner and built-in experiments.
 * `run_scenario`: every (variant, seed) of a scenario, optionally in parallel.
 * `sweep`: a scenario over the cartesian product of dotted-path overrides.
 * Built-ins: policy comparison on a step load, over-scaling, critical transition,
   cost heatmap, burst amplification, threshold robustness and analytic validations.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from data import evaluation as ev
from data.report import summary_table
from data.reader import ScenarioConfig, ScenarioError, VariantConfig, apply_overrides, config_hash
from tool import analytics
from tool.cost import PricingRule, relative_billing
from tool.policies import RetryPolicySpec
from tool.retryguard import ControllerConfig
from tool.services import AutoscalerSpec
from tool.tandem import TandemSimulation

logger = logging.getLogger(__name__)


@dataclass
class BuiltinResult():
    name: str
    tables: dict = field(default_factory=dict)
    summary: str = ""
    checks: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.checks.values())


def run_variant(config, variant_name, seed, bursts=True):
    """One seeded run; top-level so worker processes can unpickle it"""

    simulation = TandemSimulation(config, config.variant(variant_name), seed,
                                  bursts=bursts, config_digest=config_hash(config))
    return simulation.run()


def _run_task(task):
    return run_variant(*task)


def execute(tasks, jobs=1, desc="runs"):
    """Run (config, variant, seed, bursts) tasks; results keep submission order"""

    disable = len(tasks) < 2

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(tqdm(pool.map(_run_task, tasks), total=len(tasks), desc=desc, disable=disable, leave=False))

    return [_run_task(task) for task in tqdm(tasks, desc=desc, disable=disable, leave=False)]


def run_scenario(config, jobs=1):
    """All variants of a scenario over all its seeds"""

    tasks = [(config, v.name, seed, True) for v in config.resolved_variants() for seed in config.seeds]
    logger.info("scenario '%s': %d runs on %d job(s)", config.name, len(tasks), jobs)

    return execute(tasks, jobs, desc=config.name)


def sweep(config, grid, jobs=1):
    """Cartesian product over `grid` (dotted path -> values); returns [(overrides, reports)]"""

    paths = sorted(grid)
    points = [dict(zip(paths, values)) for values in itertools.product(*(grid[p] for p in paths))]
    configs = [apply_overrides(config, point) for point in points]

    tasks = [(c, v.name, seed, True) for c in configs for v in c.resolved_variants() for seed in c.seeds]
    reports = execute(tasks, jobs, desc=f"sweep {config.name}")

    grouped, offset = [], 0
    for point, c in zip(points, configs):
        n = len(c.resolved_variants()) * len(c.seeds)
        grouped.append((point, reports[offset:offset + n]))
        offset += n

    return grouped


class Params(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [1], min_length=1)


class StepParams(Params):
    horizon: float = Field(default=2400.0, gt=0)
    base_rate: float = Field(default=40.0, gt=0)
    step_rate: float = Field(default=120.0, gt=0)
    step_time: float = Field(default=300.0, ge=0)
    capacity: float = Field(default=45.0, gt=0)
    service_time: float = Field(default=0.2, ge=0)
    decision_delay: float = Field(default=600.0, ge=0)
    scale_up_breaches: int = Field(default=2, ge=1)
    scale_down_hold: float = Field(default=900.0, ge=0)
    max_capacity: float = Field(default=2000.0, gt=0)
    held_price: float = Field(default=1.0, ge=0)
    capacity_price: float = Field(default=0.1, ge=0)


def step_scenario(name, p, variants, baseline=None):
    """Step load (rate x3 by default) against a target-tracking downstream"""

    scaler = AutoscalerSpec(kind="target-tracking",
                            target_utilization=0.9,
                            tick_period=60.0,
                            measurement_window=60.0,
                            decision_delay=p.decision_delay,
                            scale_up_breaches=p.scale_up_breaches,
                            scale_down_hold=p.scale_down_hold,
                            min_capacity=1.0,
                            max_capacity=p.max_capacity)

    return ScenarioConfig.model_validate({
        "name": name,
        "horizon": p.horizon,
        "seeds": p.seeds,
        "traffic": {"base_rate": p.base_rate, "changes": [{"time": p.step_time, "rate": p.step_rate}]},
        "services": [
            {"name": "A", "model": "unbounded",
             "pricing": PricingRule(kind="invocation-duration", price_per_second_held=p.held_price)},
            {"name": "B", "capacity": p.capacity, "service_time": p.service_time, "scaler": scaler,
             "pricing": PricingRule(kind="provisioned-capacity", price_per_capacity_unit_second=p.capacity_price)},
        ],
        "service_model": "capacity-slot",
        "variants": variants,
        "baseline": baseline,
    })


def _variant(name, policy, controller=None):
    return VariantConfig(name=name, policy=RetryPolicySpec(**policy),
                         controller=ControllerConfig(**controller) if controller is not None else None)


def _mean_metric(reports, variant, metric):
    return float(np.mean([r.metrics[metric] for r in reports if r.variant == variant]))


class StormParams(StepParams):
    legacy_retries: int = Field(default=5, ge=1)
    standard_retries: int = Field(default=2, ge=1)
    threshold: float = Field(default=0.2, gt=0)
    interval: int = Field(default=6, ge=1)
    tick_period: float = Field(default=5.0, gt=0)


POLICY_ORDER = ["legacy", "standard", "adaptive", "retryguard"]


def builtin_storm_comparison(p, jobs=1):
    """The five policies on the same step load with common random numbers"""

    variants = [
        _variant("none", {"kind": "none"}),
        _variant("legacy", {"kind": "legacy", "max_attempts": p.legacy_retries}),
        _variant("standard", {"kind": "standard", "max_attempts": p.standard_retries}),
        _variant("adaptive", {"kind": "adaptive", "max_attempts": p.standard_retries}),
        _variant("retryguard", {"kind": "standard", "max_attempts": p.standard_retries},
                 {"threshold": p.threshold, "interval": p.interval, "tick_period": p.tick_period}),
    ]
    config = step_scenario("storm-comparison", p, variants, baseline="retryguard")
    reports = run_scenario(config, jobs)

    names = [v.name for v in variants]
    metric = {name: {m: _mean_metric(reports, name, m)
                     for m in ("retries_per_request", "rejection_rate", "cost_total", "cost_upstream",
                               "mean_latency", "goodput", "final_capacity")} for name in names}
    billing = relative_billing({name: metric[name]["cost_total"] for name in names}, "retryguard")

    rows = [{"policy": name, **metric[name], "billing_pct": billing[name]} for name in names]
    columns = ["policy", "retries_per_request", "rejection_rate", "mean_latency", "goodput",
               "final_capacity", "cost_upstream", "cost_total", "billing_pct"]

    rpr = [metric[n]["retries_per_request"] for n in POLICY_ORDER]
    bill = [billing[n] for n in POLICY_ORDER]
    base = metric["none"]["rejection_rate"]

    checks = {
        "retries ordering legacy > standard > adaptive > retryguard": all(a > b for a, b in zip(rpr, rpr[1:])),
        "retryguard retries <= 10% of legacy": rpr[3] <= 0.1 * rpr[0],
        "rejection rates within 2 points of no-retry": all(abs(metric[n]["rejection_rate"] - base) <= 0.02
                                                           for n in names),
        "billing ordering legacy > standard > adaptive > retryguard": all(a > b for a, b in zip(bill, bill[1:])),
        "legacy billing >= 3x retryguard": bill[0] >= 300.0,
        "upstream cost legacy / retryguard > 3": metric["legacy"]["cost_upstream"] > 3 * metric["retryguard"]["cost_upstream"],
    }

    return BuiltinResult("storm-comparison", {"storm-comparison": (columns, rows)},
                         summary_rows(columns, rows), checks, reports)


class OverScalingParams(StepParams):
    horizon: float = Field(default=1500.0, gt=0)
    budget_ratio: float = Field(default=0.2, ge=0)


def builtin_over_scaling(p, jobs=1):
    """Converged downstream capacity with a retry budget inflating measured load"""

    budget = {"kind": "budget", "budget_ratio": p.budget_ratio}
    variants = [_variant("none", {"kind": "none"}), _variant("budget", budget),
                _variant("retryguard", budget, {"metric": "rejection-rate"})]
    config = step_scenario("over-scaling", p, variants)
    reports = run_scenario(config, jobs)

    base = _mean_metric(reports, "none", "final_capacity")
    rows = []
    for v in variants:
        capacity = _mean_metric(reports, v.name, "final_capacity")
        rows.append({"policy": v.name, "final_capacity": capacity, "excess": capacity / base - 1.0})

    excess = {row["policy"]: row["excess"] for row in rows}
    checks = {
        "budget over-provisions by 15-25%": 0.15 <= excess["budget"] <= 0.25,
        "retryguard over-provisions by < 5%": excess["retryguard"] < 0.05,
    }
    columns = ["policy", "final_capacity", "excess"]

    return BuiltinResult("over-scaling", {"over-scaling": (columns, rows)}, summary_rows(columns, rows), checks, reports)


class ThresholdBandParams(StepParams):
    horizon: float = Field(default=1500.0, gt=0)
    k: int = Field(default=5, ge=1)
    m: int = Field(default=20, ge=1)
    thresholds: Optional[List[float]] = None
    points: int = Field(default=5, ge=2)
    base_delay: float = Field(default=0.1, gt=0)


def threshold_band(k, m, low=0.95, high=1.1):
    """Normalized retry values bounding the robust threshold band"""

    lo = analytics.normalized_retry_curve([low], k, m)[0].value
    hi = analytics.normalized_retry_curve([high], k, m)[-1].value
    return lo, hi


def builtin_threshold_band(p, jobs=1):
    """Every threshold inside the band must produce the same switching trace"""

    lo, hi = threshold_band(p.k, p.m)
    thresholds = p.thresholds or np.linspace(lo, hi, p.points).tolist()
    policy = {"kind": "legacy", "max_attempts": p.k, "base_delay": p.base_delay}

    variants = [_variant(f"threshold={t:.6g}", policy, {"metric": "retries-per-request", "threshold": t})
                for t in thresholds]
    config = step_scenario("threshold-band", p, variants)
    reports = run_scenario(config, jobs)

    traces = {}
    for r in reports:
        traces.setdefault(r.seed, []).append(tuple(tuple(t) for t in r.transitions))

    rows = [{"threshold": t, "seed": r.seed, "transitions": len(r.transitions),
             "first_off": next((time for time, mode in r.transitions if mode == "OFF"), -1.0)}
            for t, r in zip(thresholds * len(p.seeds), sorted(reports, key=lambda r: r.seed))]

    checks = {
        "thresholds inside the band": all(lo <= t <= hi for t in thresholds),
        "identical switching traces": all(len(set(ts)) == 1 for ts in traces.values()),
        "controller switches at least once": all(len(ts[0]) > 0 for ts in traces.values()),
    }
    columns = ["threshold", "seed", "transitions", "first_off"]

    return BuiltinResult("threshold-band", {"threshold-band": (columns, rows)},
                         f"#### band [{lo:.4f}, {hi:.4f}]\n" + summary_rows(columns, rows), checks, reports)


class CriticalParams(Params):
    k: int = Field(default=5, ge=1)
    m: int = Field(default=20, ge=1)
    rho_grid: List[float] = Field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.1, 1.2, 1.5, 2.0])
    arrivals: int = Field(default=1_000_000, gt=0)
    overload_arrivals: int = Field(default=50_000, gt=0)
    base_delay: float = Field(default=10.0, gt=0)


def _single(name, horizon, warmup, seeds, rate, downstream, policy, service_model):
    return ScenarioConfig.model_validate({
        "name": name, "horizon": horizon, "warmup": warmup, "seeds": seeds,
        "traffic": {"base_rate": rate},
        "services": [{"name": "A", "model": "unbounded"}, {"name": "B", **downstream}],
        "service_model": service_model,
        "policy": policy,
        "outputs": ["metrics"],
    })


def critical_point_config(rho, p):
    """Stable side: M/M/1/m without retries. Overload side: capacity-slot with k attempts."""

    if rho < 1:
        horizon = p.arrivals / rho
        return _single(f"critical-{rho:g}", horizon, 0.0, p.seeds, rho,
                       {"capacity": 1.0, "buffer_size": p.m}, RetryPolicySpec(kind="none"), "mm1m")

    horizon = p.overload_arrivals / rho
    policy = RetryPolicySpec(kind="standard", max_attempts=p.k - 1, base_delay=p.base_delay,
                             max_delay=p.base_delay * 2 ** p.k)
    warmup = min(0.2 * horizon, 20 * p.base_delay * 2 ** p.k)

    return _single(f"critical-{rho:g}", horizon, warmup, p.seeds, rho,
                   {"capacity": 1.0, "slot_interval": 20.0}, policy, "capacity-slot")


def blocking_floor(rho, m, offers):
    """Smallest standard error credited to a simulated M/M/1/m blocking fraction"""

    # blocked arrivals come in runs of mean 1 + rho
    blocking = analytics.mm1m_rejection_prob(analytics.StableLoadModel(rho=rho, m=m))
    return ev.rare_event_stderr(blocking, offers, inflation=1.0 + 2.0 * rho)


def builtin_critical_transition(p, jobs=1):
    """Analytic normalized retry curve against simulated points on both sides of rho = 1"""

    grid = [rho for rho in p.rho_grid if rho != 1.0]
    curve = analytics.normalized_retry_curve(p.rho_grid, p.k, p.m)

    configs = [critical_point_config(rho, p) for rho in grid]
    tasks = [(c, c.resolved_variants()[0].name, seed, True) for c in configs for seed in p.seeds]
    reports = execute(tasks, jobs, desc="critical-transition")

    rows, checks = [], {}
    for rho, c in zip(grid, configs):
        runs = [r for r in reports if r.scenario == c.name]
        analytic = next(pt.value for pt in curve if pt.rho == rho)

        if rho < 1:
            num = np.sum([r.batches["rejections"] for r in runs], axis=0)
            den = np.sum([r.batches["offers"] for r in runs], axis=0)
            blocking, se = ev.ratio_batch_means(num, den)
            se = max(se, blocking_floor(rho, p.m, den.sum()))
            simulated, stderr = p.k * blocking, p.k * se
            checks[f"rho={rho:g} within 3 standard errors"] = abs(simulated - analytic) <= 3 * stderr
        else:
            num = np.sum([r.batches["retry_fires"] for r in runs], axis=0)
            den = np.sum([r.batches["fresh"] for r in runs], axis=0)
            simulated, stderr = ev.ratio_batch_means(num, den)
            checks[f"rho={rho:g} within 5% relative"] = ev.relative_error(simulated, analytic) < 0.05

        rows.append({"rho": rho, "regime": "stable" if rho < 1 else "overload",
                     "analytic": analytic, "simulated": simulated, "stderr": stderr})

    steep = analytics.normalized_retry_curve([0.9, 1.1], p.k, p.m)
    ratio = steep[-1].value / steep[0].value
    checks["steepness (1.1 vs 0.9) >= 5"] = ratio >= 5.0

    curve_rows = [{"rho": pt.rho, "regime": pt.regime, "value": pt.value} for pt in curve]
    columns = ["rho", "regime", "analytic", "simulated", "stderr"]

    return BuiltinResult("critical-transition",
                         {"critical-transition": (columns, rows), "critical-curve": (["rho", "regime", "value"], curve_rows)},
                         f"#### steepness ratio {ratio:.2f}\n" + summary_rows(columns, rows), checks, reports)


class HeatmapParams(Params):
    rho_range: List[float] = Field(default_factory=lambda: [1.05, 1.25, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0])
    k_range: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5, 6])


def builtin_cost_heatmap(p, jobs=1):
    """Expected backoff delay over (rho, k), analytic only"""

    grid = analytics.cost_heatmap(p.rho_range, p.k_range)
    rows = []

    for r, rho in enumerate(p.rho_range):
        for c, k in enumerate(p.k_range):
            p_tilde = analytics.overload_rejection_prob(analytics.OverloadModel(lam=rho, mu=1.0, k=k))
            rows.append({"rho": rho, "k": k, "p_tilde": p_tilde, "expected_delay": float(grid[r, c])})

    checks = {"rows non-decreasing in k": bool(np.all(np.diff(grid, axis=1) >= -1e-12))}

    if 1.05 in p.rho_range and 4.0 in p.rho_range and 6 in p.k_range:
        col = p.k_range.index(6)
        checks["rho=4 above rho=1.05 at k=6"] = grid[p.rho_range.index(4.0), col] > grid[p.rho_range.index(1.05), col]

    columns = ["rho", "k", "p_tilde", "expected_delay"]

    return BuiltinResult("cost-heatmap", {"cost-heatmap": (columns, rows)}, summary_rows(columns, rows), checks)


class BurstParams(Params):
    horizon: float = Field(default=600.0, gt=0)
    base_rate: float = Field(default=40.0, gt=0)
    capacity: float = Field(default=42.1, gt=0)
    service_time: float = Field(default=0.2, ge=0)
    burst_start: float = Field(default=120.0, gt=20)
    burst_duration: float = Field(default=10.0, gt=0)
    burst_extra: float = Field(default=86.3, gt=0)
    legacy_retries: int = Field(default=5, ge=1)
    threshold: float = Field(default=0.2, gt=0)
    interval: int = Field(default=3, ge=1)
    tick_period: float = Field(default=1.0, gt=0)
    quiet_period: int = Field(default=10, ge=1)


def builtin_burst_ddos(p, jobs=1):
    """Short burst far above capacity; storm duration and burst-attributable cost per policy"""

    legacy = {"kind": "legacy", "max_attempts": p.legacy_retries}
    variants = [_variant("none", {"kind": "none"}), _variant("legacy", legacy),
                _variant("retryguard", legacy, {"threshold": p.threshold, "interval": p.interval,
                                                "tick_period": p.tick_period})]

    config = ScenarioConfig.model_validate({
        "name": "burst-ddos", "horizon": p.horizon, "seeds": p.seeds,
        "traffic": {"base_rate": p.base_rate,
                    "bursts": [{"start": p.burst_start, "duration": p.burst_duration, "extra_rate": p.burst_extra}]},
        "services": [{"name": "A", "model": "unbounded"},
                     {"name": "B", "capacity": p.capacity, "service_time": p.service_time}],
        "service_model": "capacity-slot",
        "variants": variants,
    })

    tasks = [(config, v.name, seed, bursts) for v in variants for seed in p.seeds for bursts in (True, False)]
    reports = execute(tasks, jobs, desc="burst-ddos")

    rows = []
    for i, (v, seed) in enumerate((v, seed) for v in variants for seed in p.seeds):
        attacked, quiet = reports[2 * i], reports[2 * i + 1]
        bins = attacked.rejections_per_second
        floor = ev.quiet_floor(bins, 20, p.burst_start)

        rows.append({
            "policy": v.name,
            "seed": seed,
            "storm_duration": ev.storm_duration(bins, p.burst_start, floor, p.quiet_period),
            "floor": floor,
            "burst_cost": attacked.metrics["cost_burst"],
            "collateral_cost": attacked.metrics["cost_fresh"] - quiet.metrics["cost_fresh"],
            "retries_per_request": attacked.metrics["retries_per_request"],
        })

    duration = {v.name: float(np.mean([r["storm_duration"] for r in rows if r["policy"] == v.name])) for v in variants}
    checks = {
        "legacy storm >= 5x burst": duration["legacy"] >= 5 * p.burst_duration,
        "retryguard storm <= 2x no-retry": duration["retryguard"] <= 2 * duration["none"],
    }
    columns = ["policy", "seed", "storm_duration", "floor", "burst_cost", "collateral_cost", "retries_per_request"]

    return BuiltinResult("burst-ddos", {"burst-ddos": (columns, rows)}, summary_rows(columns, rows), checks, reports)


class OverloadParams(Params):
    mu: float = Field(default=50.0, gt=0)
    rhos: List[float] = Field(default_factory=lambda: [1.2, 1.5, 2.0])
    ks: List[int] = Field(default_factory=lambda: [2, 5])
    horizon: float = Field(default=400.0, gt=0)
    warmup: float = Field(default=100.0, ge=0)
    base_delay: float = Field(default=0.5, gt=0)
    goodput_rho: float = Field(default=1.5, gt=1)


def builtin_overload_validation(p, jobs=1):
    """Per-stage retry rates and rejection probability against the overload model"""

    def config(rho, policy, name):
        return _single(name, p.horizon, p.warmup, p.seeds, rho * p.mu,
                       {"capacity": p.mu, "service_time": 0.01}, policy, "capacity-slot")

    cases = []
    for rho, k in itertools.product(p.rhos, p.ks):
        policy = RetryPolicySpec(kind="standard", max_attempts=k - 1, base_delay=p.base_delay,
                                 max_delay=p.base_delay * 2 ** k)
        cases.append((rho, k, config(rho, policy, f"overload-{rho:g}-{k}")))

    kinds = ["none", "legacy", "standard", "adaptive", "budget"]
    goodput_configs = [config(p.goodput_rho, RetryPolicySpec(kind=kind), f"goodput-{kind}") for kind in kinds]

    tasks = [(c, c.resolved_variants()[0].name, seed, True) for _, _, c in cases for seed in p.seeds]
    tasks += [(c, c.resolved_variants()[0].name, seed, True) for c in goodput_configs for seed in p.seeds]
    reports = execute(tasks, jobs, desc="overload-validation")

    rows, checks = [], {}
    for rho, k, c in cases:
        runs = [r for r in reports if r.scenario == c.name]
        solution = analytics.solve_overload(analytics.OverloadModel(lam=rho * p.mu, mu=p.mu, k=k))
        simulated = np.mean([r.stage_rates for r in runs], axis=0)

        for i, expected in enumerate(solution.lambda_i):
            rows.append({"rho": rho, "k": k, "quantity": f"lambda_{i}", "analytic": expected,
                         "simulated": float(simulated[i]), "rel_error": ev.relative_error(simulated[i], expected)})

        p_sim = float(np.mean([r.metrics["rejection_prob"] for r in runs]))
        rows.append({"rho": rho, "k": k, "quantity": "p_tilde", "analytic": solution.p_tilde,
                     "simulated": p_sim, "rel_error": ev.relative_error(p_sim, solution.p_tilde)})

        checks[f"rho={rho:g} k={k} within 5%"] = all(row["rel_error"] < 0.05 for row in rows[-(k + 2):])

    for kind, c in zip(kinds, goodput_configs):
        goodput = float(np.mean([r.metrics["goodput"] for r in reports if r.scenario == c.name]))
        rows.append({"rho": p.goodput_rho, "k": kind, "quantity": "goodput", "analytic": p.mu,
                     "simulated": goodput, "rel_error": ev.relative_error(goodput, p.mu)})
        checks[f"goodput {kind} within 5% of capacity"] = rows[-1]["rel_error"] < 0.05

    columns = ["rho", "k", "quantity", "analytic", "simulated", "rel_error"]

    return BuiltinResult("overload-validation", {"overload-validation": (columns, rows)},
                         summary_rows(columns, rows), checks, reports)


class MM1mParams(Params):
    rhos: List[float] = Field(default_factory=lambda: [0.5, 0.8, 0.95])
    ms: List[int] = Field(default_factory=lambda: [5, 20])
    arrivals: int = Field(default=1_000_000, gt=0)


def builtin_mm1m_validation(p, jobs=1):
    """Simulated M/M/1/m blocking against the closed form, within 3 batch-means standard errors"""

    cases = [(rho, m, _single(f"mm1m-{rho:g}-{m}", p.arrivals / rho, 0.0, p.seeds, rho,
                              {"capacity": 1.0, "buffer_size": m}, RetryPolicySpec(kind="none"), "mm1m"))
             for rho, m in itertools.product(p.rhos, p.ms)]

    tasks = [(c, c.resolved_variants()[0].name, seed, True) for _, _, c in cases for seed in p.seeds]
    reports = execute(tasks, jobs, desc="mm1m-validation")

    rows, checks = [], {}
    for rho, m, c in cases:
        runs = [r for r in reports if r.scenario == c.name]
        num = np.sum([r.batches["rejections"] for r in runs], axis=0)
        den = np.sum([r.batches["offers"] for r in runs], axis=0)
        simulated, se = ev.ratio_batch_means(num, den)
        analytic = analytics.mm1m_rejection_prob(analytics.StableLoadModel(rho=rho, m=m))
        se = max(se, blocking_floor(rho, m, den.sum()))

        rows.append({"rho": rho, "m": m, "analytic": analytic, "simulated": simulated, "stderr": se,
                     "z": (simulated - analytic) / se if se > 0 else 0.0})
        checks[f"rho={rho:g} m={m} within 3 standard errors"] = abs(simulated - analytic) <= 3 * se

    columns = ["rho", "m", "analytic", "simulated", "stderr", "z"]

    return BuiltinResult("mm1m-validation", {"mm1m-validation": (columns, rows)},
                         summary_rows(columns, rows), checks, reports)


class BackoffParams(Params):
    p_tildes: List[float] = Field(default_factory=lambda: [0.2, 0.5, 0.8])
    ks: List[int] = Field(default_factory=lambda: [3, 5])
    rate: float = Field(default=100.0, gt=0)
    horizon: float = Field(default=1200.0, gt=0)


def builtin_backoff_delay(p, jobs=1):
    """Mean held time under legacy backoff at a forced rejection probability"""

    cases = []
    for p_tilde, k in itertools.product(p.p_tildes, p.ks):
        policy = RetryPolicySpec(kind="legacy", max_attempts=k, base_delay=1.0, max_delay=2.0 ** k)
        warmup = 2.0 ** (k + 1)
        cases.append((p_tilde, k, _single(f"backoff-{p_tilde:g}-{k}", p.horizon, warmup, p.seeds, p.rate,
                                          {"model": "bernoulli", "reject_prob": p_tilde}, policy, "bernoulli")))

    tasks = [(c, c.resolved_variants()[0].name, seed, True) for _, _, c in cases for seed in p.seeds]
    reports = execute(tasks, jobs, desc="backoff-delay")

    rows, checks = [], {}
    for p_tilde, k, c in cases:
        runs = [r for r in reports if r.scenario == c.name]
        simulated = float(np.mean([r.metrics["mean_latency"] for r in runs]))
        analytic = analytics.expected_backoff_delay(p_tilde, k)
        counts = np.sum([r.retry_counts for r in runs], axis=0)
        fit = ev.retry_count_fit(counts, p_tilde, k)

        rows.append({"p_tilde": p_tilde, "k": k, "analytic": analytic, "simulated": simulated,
                     "rel_error": ev.relative_error(simulated, analytic), "chi2_pvalue": fit})
        checks[f"p={p_tilde:g} k={k} mean delay within 5%"] = rows[-1]["rel_error"] < 0.05
        checks[f"p={p_tilde:g} k={k} retry counts truncated geometric"] = fit > 0.01

    columns = ["p_tilde", "k", "analytic", "simulated", "rel_error", "chi2_pvalue"]

    return BuiltinResult("backoff-delay", {"backoff-delay": (columns, rows)}, summary_rows(columns, rows), checks, reports)


def summary_rows(columns, rows):
    return summary_table("results", columns, rows)


BUILTINS = {
    "storm-comparison": (StormParams, builtin_storm_comparison),
    "over-scaling": (OverScalingParams, builtin_over_scaling),
    "threshold-band": (ThresholdBandParams, builtin_threshold_band),
    "critical-transition": (CriticalParams, builtin_critical_transition),
    "cost-heatmap": (HeatmapParams, builtin_cost_heatmap),
    "burst-ddos": (BurstParams, builtin_burst_ddos),
    "overload-validation": (OverloadParams, builtin_overload_validation),
    "mm1m-validation": (MM1mParams, builtin_mm1m_validation),
    "backoff-delay": (BackoffParams, builtin_backoff_delay),
}


def run_builtin(name, params=None, jobs=1):
    """Validate parameters and run one built-in experiment"""

    if name not in BUILTINS:
        raise ScenarioError(f"unknown built-in '{name}' (available: {', '.join(sorted(BUILTINS))})")

    model, fn = BUILTINS[name]

    try:
        p = model.model_validate(params or {})
    except ValidationError as err:
        raise ScenarioError(f"invalid parameters for '{name}': {err}") from err

    logger.info("built-in %s with %s", name, p.model_dump())
    result = fn(p, jobs)

    for check, ok in result.checks.items():
        logger.log(logging.INFO if ok else logging.WARNING, "%s: %s", check, "pass" if ok else "FAIL")

    return result
