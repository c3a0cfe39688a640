"""
One seeded run of the Service A -> Service B tandem.
Wires traffic, services, the retry policy, the optional controller and the cost ledgers
onto one simulator and condenses the event trace into a `RunReport`.
"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from data.generator import TrafficGenerator
from tool import __version__
from tool.cost import CapacityMeter, CostLedger, RequestActivity, accrue
from tool.engine import Aggregation, EventKind, MetricSeries, RandomStreams, Simulator
from tool.policies import RetryPolicy
from tool.retryguard import RetryGuard, apply_mode
from tool.services import (Origin, Request, RequestState, ServiceNode, TrafficProfile, offer, scaler_tick,
                           upstream_hold_and_retry)

logger = logging.getLogger(__name__)

BATCHES = 50


@dataclass
class RunReport():
    scenario: str
    variant: str
    seed: int
    config_hash: str
    version: str
    metrics: dict
    stage_rates: list
    trajectories: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    costs: dict = field(default_factory=dict)
    rejections_per_second: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)
    retry_counts: list = field(default_factory=list)
    events: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


class TandemSimulation():

    def __init__(self, config, variant, seed, bursts=True, config_digest=""):
        self.config = config
        self.variant = variant
        self.seed = seed
        self.digest = config_digest
        self.sim = Simulator()
        self.streams = RandomStreams(seed)

        up, down = config.upstream, config.downstream
        self.service_a = ServiceNode(up.name, model="unbounded", capacity=up.capacity, sim=self.sim, streams=self.streams)
        self.service_a.series.update({
            "fresh": MetricSeries(f"{up.name}.fresh"),
            "retries": MetricSeries(f"{up.name}.retries"),
            "retry_fires": MetricSeries(f"{up.name}.retry_fires"),
            "successes": MetricSeries(f"{up.name}.successes"),
            "failures": MetricSeries(f"{up.name}.failures"),
            "latency": MetricSeries(f"{up.name}.latency", Aggregation.MEAN),
        })

        self.service_b = ServiceNode(down.name,
                                     model=down.model or config.service_model,
                                     capacity=down.capacity,
                                     buffer_size=down.buffer_size,
                                     service_time=down.service_time,
                                     slot_interval=down.slot_interval,
                                     reject_prob=down.reject_prob,
                                     scaler=down.scaler,
                                     sim=self.sim,
                                     streams=self.streams)

        self.guard = None
        if variant.controller is not None:
            edge_metrics = {
                "offers": self.service_b.series["offers"],
                "rejections": self.service_b.series["rejections"],
                "fresh": self.service_a.series["fresh"],
                "retries": self.service_a.series["retries"],
                "latency": self.service_a.series["latency"],
            }
            self.guard = RetryGuard(variant.controller, edge_metrics, edge=f"{up.name}->{down.name}")

        policy = RetryPolicy(variant.policy, self.streams.get("jitter"))
        self.policy = apply_mode(policy, self.guard)
        self.cutoff = max(config.warmup, config.horizon - self._settle_time(policy))

        self.ledgers = {up.name: CostLedger(up.name), down.name: CostLedger(down.name)}
        self.meter = None
        if down.pricing.kind != "invocation-duration":
            self.meter = CapacityMeter(self.ledgers[down.name], down.pricing, 0.0,
                                       self.service_b.capacity, self._replicas())

        self.profile = config.traffic if bursts else TrafficProfile(base_rate=config.traffic.base_rate,
                                                                    changes=config.traffic.changes)
        self.generator = TrafficGenerator(self.profile, self.sim, self.streams, self._admit_fresh, bursts=bursts)

        self.next_id = 0
        self.counts = Counter()
        self.stage_offers = Counter()
        self.retry_counts = Counter()
        self.settled_held = 0.0
        self.settled_count = 0
        self.in_system = 0
        self.trajectories = []

        self.sim.on(EventKind.ARRIVAL, self.generator.on_arrival)
        self.sim.on(EventKind.TRAFFIC_CHANGE, self.generator.on_change)
        self.sim.on(EventKind.RETRY_FIRE, self._on_retry)
        self.sim.on(EventKind.SERVICE_COMPLETE, self._on_complete)
        self.sim.on(EventKind.SCALER_TICK, self._on_scaler_tick)
        self.sim.on(EventKind.CONTROLLER_TICK, self._on_controller_tick)
        self.sim.on(EventKind.MEASUREMENT_FLUSH, self._on_flush)

    def _replicas(self):
        return self.service_b.scaler.replicas if self.service_b.scaler is not None else 0.0

    def _settle_time(self, policy):
        """Longest stay of one request in the system: every backoff plus one bounded sojourn per attempt"""

        retries = policy.spec.max_attempts if policy.retries_enabled else 0
        settle = policy.total_backoff() + (retries + 1) * self.service_b.sojourn_bound

        if self.config.request_timeout is not None:
            settle = min(settle, self.config.request_timeout + self.service_b.sojourn_bound)

        return settle

    def _periodic(self, kind, period):
        nxt = self.sim.now + period
        if nxt <= self.config.horizon:
            self.sim.schedule(nxt, kind)

    def _admit_fresh(self, origin, now):
        request = Request(id=self.next_id, arrival_time=now, origin=origin)
        self.next_id += 1

        if self.config.request_timeout is not None:
            request.deadline = now + self.config.request_timeout

        self.counts[f"arrived:{origin.value}"] += 1
        self.in_system += 1
        self.service_a.series["fresh"].record(now)
        self.policy.notify_fresh(now)
        self._attempt(request, now)

    def _attempt(self, request, now):
        if now > self.config.warmup:
            self.stage_offers[request.attempt] += 1

        if offer(self.service_b, request, now):
            return

        if upstream_hold_and_retry(self.service_a, request, self.policy, self.sim, now) is None:
            self._finish(request, now)

    def _on_retry(self, event):
        request = event.payload
        request.advance(RequestState.PENDING)
        self.service_a.series["retry_fires"].record(event.fire_time)
        self._attempt(request, event.fire_time)

    def _on_complete(self, event):
        node, request = event.payload
        now = event.fire_time

        node.complete(request, now)
        request.advance(RequestState.SUCCEEDED)
        request.completion_time = now
        self.policy.notify_success(now)
        self._finish(request, now)

    def _finish(self, request, now):
        held = now - request.arrival_time
        self.in_system -= 1
        outcome = "succeeded" if request.state == RequestState.SUCCEEDED else "failed"
        self.counts[f"{outcome}:{request.origin.value}"] += 1

        # arrivals after the cutoff may still be held at the horizon
        if self.config.warmup < request.arrival_time <= self.cutoff:
            self.retry_counts[request.attempt] += 1
            self.settled_held += held
            self.settled_count += 1

        self.service_a.series["latency"].record(now, held)
        self.service_a.series["successes" if outcome == "succeeded" else "failures"].record(now, request.arrival_time)

        rule = self.config.upstream.pricing
        accrue(self.ledgers[self.service_a.name], rule, RequestActivity(now, held, request.origin.value))

    def _on_scaler_tick(self, event):
        changed = scaler_tick(self.service_b, event.fire_time)

        if changed is not None and self.meter is not None:
            self.meter.update(event.fire_time, self.service_b.capacity, self._replicas())

        self._periodic(EventKind.SCALER_TICK, self.service_b.scaler.spec.tick_period)

    def _on_controller_tick(self, event):
        self.guard.tick(event.fire_time)
        self._periodic(EventKind.CONTROLLER_TICK, self.guard.config.tick_period)

    def _on_flush(self, event):
        now = event.fire_time
        start = now - self.config.flush_period
        a, b = self.service_a.series, self.service_b.series

        self.trajectories.append({
            "time": now,
            "capacity": self.service_b.capacity,
            "replicas": self._replicas(),
            "fresh_rate": a["fresh"].rate(start, now),
            "offered_rate": b["offers"].rate(start, now),
            "rejection_rate": b["rejections"].rate(start, now),
            "retry_rate": a["retry_fires"].rate(start, now),
            "held": self.in_system,
            "retries_enabled": int(self.guard.retries_enabled) if self.guard is not None else 1,
            "spend_upstream": self.ledgers[self.service_a.name].accrued,
            "spend_downstream": self.ledgers[self.service_b.name].accrued,
        })

        self._periodic(EventKind.MEASUREMENT_FLUSH, self.config.flush_period)

    def conservation(self):
        """(arrived, succeeded, failed, in_system); arrived = succeeded + failed + in_system"""

        arrived = sum(v for k, v in self.counts.items() if k.startswith("arrived:"))
        succeeded = sum(v for k, v in self.counts.items() if k.startswith("succeeded:"))
        failed = sum(v for k, v in self.counts.items() if k.startswith("failed:"))

        return arrived, succeeded, failed, self.in_system

    def run(self):
        horizon = self.config.horizon
        logger.info("run %s/%s seed=%d horizon=%.0f", self.config.name, self.variant.name, self.seed, horizon)

        self.generator.start()
        if self.service_b.scaler is not None:
            self._periodic(EventKind.SCALER_TICK, self.service_b.scaler.spec.tick_period)
        if self.guard is not None:
            self._periodic(EventKind.CONTROLLER_TICK, self.guard.config.tick_period)
        self._periodic(EventKind.MEASUREMENT_FLUSH, self.config.flush_period)

        summary = self.sim.run_until(horizon)

        if self.meter is not None:
            self.meter.close(horizon)

        return self.report(summary)

    def report(self, summary):
        config, horizon, warmup = self.config, self.config.horizon, self.config.warmup
        span = horizon - warmup
        a, b = self.service_a.series, self.service_b.series

        fresh = a["fresh"].count(warmup, horizon)
        successes = [t for t, arrival in a["successes"].rows() if arrival > warmup]
        failures = [t for t, arrival in a["failures"].rows() if arrival > warmup]
        finished = len(successes) + len(failures)
        offers = b["offers"].count(warmup, horizon)

        max_retries = self.variant.policy.max_attempts
        stage_rates = [self.stage_offers[i] / span for i in range(max_retries + 1)]
        stage_rates.append(a["failures"].count(warmup, horizon) / span)

        ledger_a, ledger_b = self.ledgers[self.service_a.name], self.ledgers[self.service_b.name]
        burst_cost = sum(v for k, v in ledger_a.breakdown.items() if k.endswith(Origin.BURST.value))

        arrived, succeeded, failed, in_system = self.conservation()
        bins = []
        if self.profile.bursts:
            seconds = int(np.ceil(horizon))
            bins = np.histogram(np.asarray(b["rejections"].times), bins=seconds, range=(0.0, float(seconds)))[0].tolist()

        batches = {name: np.histogram(np.asarray(series.times), bins=BATCHES, range=(warmup, horizon))[0].tolist()
                   for name, series in (("offers", b["offers"]), ("rejections", b["rejections"]),
                                        ("fresh", a["fresh"]), ("retry_fires", a["retry_fires"]),
                                        ("successes", a["successes"]))}
        retry_counts = [self.retry_counts[i] for i in range(max_retries + 1)]

        metrics = {
            "fresh": fresh,
            "retries_per_request": a["retry_fires"].count(warmup, horizon) / fresh if fresh else 0.0,
            "rejection_rate": len(failures) / finished if finished else 0.0,
            "rejection_prob": b["rejections"].count(warmup, horizon) / offers if offers else 0.0,
            "mean_latency": self.settled_held / self.settled_count if self.settled_count else 0.0,
            "goodput": a["successes"].count(warmup, horizon) / span,
            "offered_rate": offers / span,
            "arrived": arrived,
            "succeeded": succeeded,
            "failed": failed,
            "in_system": in_system,
            "final_capacity": self.service_b.capacity,
            "peak_capacity": max(b["capacity"].values),
            "cost_upstream": ledger_a.accrued,
            "cost_downstream": ledger_b.accrued,
            "cost_total": ledger_a.accrued + ledger_b.accrued,
            "cost_burst": burst_cost,
            "cost_fresh": ledger_a.accrued - burst_cost,
        }

        return RunReport(scenario=config.name,
                         variant=self.variant.name,
                         seed=self.seed,
                         config_hash=self.digest,
                         version=__version__,
                         metrics=metrics,
                         stage_rates=stage_rates,
                         trajectories=self.trajectories,
                         transitions=list(self.guard.transitions) if self.guard is not None else [],
                         costs={name: ledger.breakdown for name, ledger in self.ledgers.items()},
                         rejections_per_second=bins,
                         batches=batches,
                         retry_counts=retry_counts,
                         events=summary.by_kind)
