"""
Tandem of services: upstream Service A holding and retrying requests, downstream Service B
with finite capacity steered by an autoscaler, and the traffic profile feeding them.

Service models:
 * mm1m: single exponential server, at most `buffer_size` requests in the system.
 * capacity-slot: token bucket refilled at the capacity rate, deterministic service time.
 * bernoulli: rejects each offer with a fixed probability.
 * unbounded: never rejects; used for the upstream holding service.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tool.engine import Aggregation, EventKind, MetricSeries

logger = logging.getLogger(__name__)


class RequestState(str, Enum):
    PENDING = "pending"
    IN_SERVICE = "in-service"
    AWAITING_RETRY = "awaiting-retry"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


# rejection at the door moves a pending request straight to awaiting-retry
TRANSITIONS = {
    RequestState.PENDING: {RequestState.IN_SERVICE, RequestState.AWAITING_RETRY},
    RequestState.IN_SERVICE: {RequestState.SUCCEEDED, RequestState.AWAITING_RETRY},
    RequestState.AWAITING_RETRY: {RequestState.PENDING, RequestState.FAILED},
    RequestState.SUCCEEDED: set(),
    RequestState.FAILED: set(),
}


class Origin(str, Enum):
    FRESH = "fresh"
    BURST = "burst-attack"


@dataclass
class Request():
    id: int
    arrival_time: float
    origin: Origin = Origin.FRESH
    attempt: int = 0
    deadline: Optional[float] = None
    state: RequestState = RequestState.PENDING
    completion_time: Optional[float] = None

    def advance(self, state):
        if state not in TRANSITIONS[self.state]:
            raise ValueError(f"request {self.id}: illegal transition {self.state.value} -> {state.value}")

        if state == RequestState.PENDING:
            self.attempt += 1

        self.state = state

    @property
    def finished(self):
        return self.state in (RequestState.SUCCEEDED, RequestState.FAILED)


class AutoscalerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["instant", "target-tracking", "hpa-like"] = "target-tracking"
    target_utilization: float = Field(default=0.9, gt=0, le=1)
    tolerance: float = Field(default=0.05, ge=0, lt=1)
    tick_period: float = Field(default=60.0, gt=0)
    decision_delay: float = Field(default=0.0, ge=0)
    measurement_window: float = Field(default=60.0, gt=0)
    scale_up_breaches: int = Field(default=1, ge=1)
    scale_down_hold: float = Field(default=900.0, ge=0)
    stabilization_window: float = Field(default=60.0, ge=0)
    min_capacity: float = Field(default=1.0, gt=0)
    max_capacity: float = Field(default=1e6, gt=0)
    replica_unit: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _bounds(self):
        if self.min_capacity > self.max_capacity:
            raise ValueError(f"min_capacity ({self.min_capacity}) exceeds max_capacity ({self.max_capacity})")
        return self


class Autoscaler():
    """Capacity controller; `tick` returns the new capacity when it changes"""

    def __init__(self, spec, capacity):
        self.spec = spec
        self.pending = None
        self.breaches = 0
        self.low_since = None
        self.replicas = max(1, math.ceil(capacity / spec.replica_unit))
        self.recommendations = deque()
        self._decide = getattr(self, f"_{spec.kind.replace('-', '_')}")

    def clamp(self, capacity):
        return min(max(capacity, self.spec.min_capacity), self.spec.max_capacity)

    def tick(self, now, measured_rate, capacity):
        if self.pending is not None:
            if now >= self.pending[0]:
                return self._apply(now)
            return None

        self._decide(now, measured_rate, capacity)

        if self.pending is not None and now >= self.pending[0]:
            return self._apply(now)

        return None

    def _apply(self, now):
        _, capacity, replicas = self.pending
        self.pending = None
        self.breaches = 0
        self.low_since = None
        self.recommendations.clear()

        if replicas is not None:
            self.replicas = replicas

        return capacity

    def _plan(self, now, capacity, replicas=None):
        self.pending = (now + self.spec.decision_delay, capacity, replicas)

    def _held_low(self, now, low):
        if not low:
            self.low_since = None
            return False

        if self.low_since is None:
            self.low_since = now

        return now - self.low_since >= self.spec.scale_down_hold

    def _instant(self, now, rate, capacity):
        desired = self.clamp(rate / self.spec.target_utilization)

        if self._held_low(now, desired < capacity) or desired > capacity:
            self._plan(now, desired)

    def _target_tracking(self, now, rate, capacity):
        utilization = rate / capacity
        target = self.spec.target_utilization
        high = utilization > target * (1 + self.spec.tolerance)
        low = utilization < target * (1 - self.spec.tolerance)

        self.breaches = self.breaches + 1 if high else 0

        if self.breaches >= self.spec.scale_up_breaches:
            self._plan(now, self.clamp(rate / target))
        elif self._held_low(now, low):
            self._plan(now, self.clamp(rate / target))

    def _hpa_like(self, now, rate, capacity):
        ratio = (rate / capacity) / self.spec.target_utilization
        desired = self.replicas

        if abs(ratio - 1.0) > self.spec.tolerance:
            desired = math.ceil(self.replicas * ratio)

        lo = max(1, math.ceil(self.spec.min_capacity / self.spec.replica_unit))
        hi = max(lo, math.floor(self.spec.max_capacity / self.spec.replica_unit))
        desired = min(max(desired, lo), hi)

        self.recommendations.append((now, desired))
        while self.recommendations and self.recommendations[0][0] < now - self.spec.stabilization_window:
            self.recommendations.popleft()

        if desired > self.replicas:
            self.low_since = None
            effective = min(r for _, r in self.recommendations)

            if effective > self.replicas:
                self._plan(now, effective * self.spec.replica_unit, effective)

        elif self._held_low(now, desired < self.replicas):
            effective = max(r for _, r in self.recommendations)

            if effective < self.replicas:
                self._plan(now, effective * self.spec.replica_unit, effective)


class ServiceNode():
    """One service tier; the model decides when an offered request is accepted"""

    def __init__(self, name, model="mm1m", capacity=1.0, buffer_size=20, service_time=0.0,
                 slot_interval=1.0, reject_prob=0.0, scaler=None, sim=None, streams=None):
        if model != "unbounded" and capacity <= 0:
            raise ValueError(f"{name}: capacity must be positive, got {capacity}")

        self.name = name
        self.model = model
        self.capacity = capacity
        self.buffer_size = buffer_size
        self.service_time = service_time
        self.slot_interval = slot_interval
        self.reject_prob = reject_prob
        self.sim = sim
        self.streams = streams
        self.scaler = Autoscaler(scaler, capacity) if scaler is not None else None

        self.queue = deque()
        self.in_service = None
        self.in_flight = 0
        self.tokens = self.depth
        self.refilled_at = 0.0

        self.series = {
            "offers": MetricSeries(f"{name}.offers"),
            "rejections": MetricSeries(f"{name}.rejections"),
            "capacity": MetricSeries(f"{name}.capacity", Aggregation.LAST),
        }
        self.series["capacity"].record(0.0, capacity)

    @property
    def depth(self):
        return max(1.0, self.capacity * self.slot_interval)

    @property
    def system_size(self):
        return max(self.buffer_size, 1)

    @property
    def sojourn_bound(self):
        """Time one accepted attempt may spend in this node; for mm1m a full system ahead of it"""

        if self.model == "mm1m":
            return self.system_size / self.capacity
        return self.service_time

    def _service_duration(self):
        if self.model == "mm1m":
            return self.streams.get(f"{self.name}.service").exponential(1.0 / self.capacity)
        return self.service_time

    def _start(self, request, now):
        request.advance(RequestState.IN_SERVICE)
        self.sim.schedule(now + self._service_duration(), EventKind.SERVICE_COMPLETE, (self, request))

    def _refill(self, now):
        self.tokens = min(self.depth, self.tokens + (now - self.refilled_at) * self.capacity)
        self.refilled_at = now

    def admits(self, now):
        if self.model == "unbounded":
            return True

        if self.model == "mm1m":
            return self.in_flight < self.system_size

        if self.model == "bernoulli":
            return self.streams.get(f"{self.name}.reject").uniform() >= self.reject_prob

        self._refill(now)
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True

        return False

    def complete(self, request, now):
        """Service finished; start the next queued request if any"""

        self.in_flight -= 1

        if self.model == "mm1m":
            self.in_service = None

            if self.queue:
                self.in_service = self.queue.popleft()
                self._start(self.in_service, now)

    def set_capacity(self, now, capacity):
        if self.model == "capacity-slot":
            self._refill(now)

        self.capacity = capacity
        self.tokens = min(self.tokens, self.depth)
        self.series["capacity"].record(now, capacity)


def offer(node, request, now):
    """Offer one attempt; returns True when accepted, False when rejected"""

    node.series["offers"].record(now, request.attempt)

    if not node.admits(now):
        node.series["rejections"].record(now, request.attempt)
        request.advance(RequestState.AWAITING_RETRY)
        return False

    node.in_flight += 1

    if node.model == "mm1m" and node.in_service is not None:
        node.queue.append(request)
    else:
        if node.model == "mm1m":
            node.in_service = request
        node._start(request, now)

    return True


def scaler_tick(node, now):
    """Feed the measured offered rate (retries included) to the node's autoscaler"""

    if node.scaler is None:
        return None

    window = node.scaler.spec.measurement_window
    rate = node.series["offers"].rate(now - window, now)
    new_capacity = node.scaler.tick(now, rate, node.capacity)

    if new_capacity is not None and new_capacity != node.capacity:
        logger.debug("%s t=%.1f capacity %.2f -> %.2f (measured %.2f req/s)",
                     node.name, now, node.capacity, new_capacity, rate)
        node.set_capacity(now, new_capacity)
        return new_capacity

    return None


def upstream_hold_and_retry(service_a, request, policy, sim, now):
    """
    Decide the fate of a rejected request held by Service A.
    Returns the scheduled retry event, or None when the request failed.
    """

    nxt = request.attempt + 1
    expired = request.deadline is not None and now >= request.deadline

    if not expired and nxt <= policy.spec.max_attempts and policy.spec.kind != "none":
        delay = policy.next_delay(nxt)
        in_time = request.deadline is None or now + delay < request.deadline

        # admission spends tokens and budget, so it comes after the deadline check
        if in_time and policy.admit_retry(nxt, now):
            service_a.series["retries"].record(now)
            return sim.schedule(now + delay, EventKind.RETRY_FIRE, request)

    request.advance(RequestState.FAILED)
    request.completion_time = now

    return None


class TrafficChange(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    time: float = Field(ge=0)
    rate: float = Field(ge=0)


class Burst(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    start: float = Field(ge=0)
    duration: float = Field(gt=0)
    extra_rate: float = Field(ge=0)
    period: float = Field(default=0.0, ge=0)
    repetitions: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _no_overlap(self):
        if self.repetitions > 1 and self.period < self.duration:
            raise ValueError(f"burst period ({self.period}) shorter than its duration ({self.duration})")
        return self


class TrafficProfile(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_rate: float = Field(ge=0)
    changes: List[TrafficChange] = Field(default_factory=list)
    bursts: List[Burst] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ordered(self):
        times = [c.time for c in self.changes]
        if times != sorted(times):
            raise ValueError(f"traffic change times must be non-decreasing: {times}")
        return self

    def burst_windows(self):
        windows = []
        for burst in self.bursts:
            for n in range(burst.repetitions):
                start = burst.start + n * burst.period
                windows.append((start, start + burst.duration, burst.extra_rate))
        return sorted(windows)
