"""
Productive-retry controller.
Counts consecutive measurements on each side of a threshold and switches retries ON after
`interval` low measurements, OFF after `interval` high ones. One instance governs one
caller -> callee edge and reads only that edge's metrics.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    ON = "ON"
    OFF = "OFF"


class ControllerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    metric: Literal["rejection-rate", "retries-per-request", "mean-latency"] = "rejection-rate"
    threshold: float = Field(default=0.2, gt=0)
    interval: int = Field(default=6, ge=1)
    tick_period: float = Field(default=5.0, gt=0)
    cooldown: float = Field(default=60.0, ge=0)
    probe_enabled: bool = False
    initial_mode: Mode = Mode.OFF


@dataclass(frozen=True)
class ControllerState():
    consecutive_low: int = 0
    consecutive_high: int = 0
    retries_mode: Mode = Mode.OFF
    last_decision_time: float = 0.0
    probing: bool = False


def ingest_measurement(state, config, value, now=None):
    """One step of the controller; returns the updated state"""

    if value < 0:
        raise ValueError(f"measurement must be non-negative, got {value}")

    low, high = state.consecutive_low, state.consecutive_high

    if value < config.threshold:
        low, high = low + 1, 0
    elif value > config.threshold:
        low, high = 0, high + 1
    else:
        low, high = 0, 0

    mode = state.retries_mode

    if low >= config.interval:
        mode = Mode.ON
    elif high >= config.interval:
        mode = Mode.OFF

    decided = state.last_decision_time
    if mode != state.retries_mode and now is not None:
        decided = now

    return replace(state, consecutive_low=low, consecutive_high=high, retries_mode=mode, last_decision_time=decided)


def measure_value(metrics, metric, start, end):
    """
    Surrogate metric over the window (start, end]; empty windows give 0.
    `metrics` maps series names ("offers", "rejections", "fresh", "retries", "latency") to MetricSeries.
    """

    if metric == "rejection-rate":
        offered = metrics["offers"].count(start, end)
        return metrics["rejections"].count(start, end) / offered if offered else 0.0

    if metric == "retries-per-request":
        fresh = metrics["fresh"].count(start, end)
        return metrics["retries"].count(start, end) / fresh if fresh else 0.0

    if metric == "mean-latency":
        return metrics["latency"].window(start, end)

    raise ValueError(f"unknown controller metric: {metric}")


def probe_cycle(state, config, now, value=None):
    """
    Cool-down probing while OFF.
    Without `value`: starts a probe (temporary ON) once the cool-down has elapsed.
    With `value` (the metric measured on probe traffic): ends the probe, returning to OFF
    when the metric is high, else handing control back to the counters.
    """

    if not config.probe_enabled:
        return state

    if not state.probing:
        if state.retries_mode == Mode.OFF and now - state.last_decision_time >= config.cooldown:
            return replace(state, probing=True)
        return state

    if value is None:
        return state

    if value > config.threshold:
        return replace(state, probing=False, consecutive_low=0, consecutive_high=0, last_decision_time=now)

    return ingest_measurement(replace(state, probing=False, last_decision_time=now), config, value, now)


class RetryGuard():
    """Controller instance for one edge; `tick` runs every `config.tick_period` seconds"""

    def __init__(self, config, metrics, edge="A->B"):
        self.config = config
        self.metrics = metrics
        self.edge = edge
        self.state = ControllerState(retries_mode=config.initial_mode)
        self.transitions = []
        self.measurements = []

    @property
    def retries_enabled(self):
        return self.state.retries_mode == Mode.ON or self.state.probing

    def tick(self, now):
        value = measure_value(self.metrics, self.config.metric, now - self.config.tick_period, now)
        self.measurements.append((now, value))
        before = self.state

        if self.state.probing:
            self.state = probe_cycle(self.state, self.config, now, value)
        else:
            self.state = ingest_measurement(self.state, self.config, value, now)
            self.state = probe_cycle(self.state, self.config, now)

        if self.state.retries_mode != before.retries_mode:
            self.transitions.append((now, self.state.retries_mode.value))
            logger.debug("%s t=%.1f retries %s (metric %s=%.4f)",
                         self.edge, now, self.state.retries_mode.value, self.config.metric, value)

        return self.state


class GuardedPolicy():
    """Retry policy whose admission is forced to deny while the guard is OFF"""

    def __init__(self, policy, guard):
        self.policy = policy
        self.guard = guard

    @property
    def spec(self):
        return self.policy.spec

    def next_delay(self, attempt):
        return self.policy.next_delay(attempt)

    def admit_retry(self, attempt, now):
        if not self.guard.retries_enabled:
            return False
        return self.policy.admit_retry(attempt, now)

    def notify_fresh(self, now):
        self.policy.notify_fresh(now)

    def notify_success(self, now):
        self.policy.notify_success(now)


def apply_mode(policy, guard):
    """Wrap the edge's policy so the guard's mode decides retry admission"""

    if guard is None:
        return policy
    return GuardedPolicy(policy, guard)
