"""
Discrete-event simulation kernel.
 * Event queue ordered by (fire_time, sequence) with cancellable handles.
 * Virtual clock advanced only by dequeuing events.
 * Named random streams, independently seeded per concern (common random numbers).
 * Metric series recorded against virtual time.
"""

import bisect
import heapq
import logging
import zlib
from array import array
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current virtual time"""


class EventKind(Enum):
    ARRIVAL = "arrival"
    SERVICE_COMPLETE = "service-complete"
    RETRY_FIRE = "retry-fire"
    SCALER_TICK = "scaler-tick"
    CONTROLLER_TICK = "controller-tick"
    TRAFFIC_CHANGE = "traffic-change"
    MEASUREMENT_FLUSH = "measurement-flush"


@dataclass(order=True)
class Event():
    fire_time: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)
    cancelled: bool = field(default=False, compare=False)


@dataclass
class SimClock():
    now: float = 0.0

    def advance(self, t):
        if t < self.now:
            raise SchedulingError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t


@dataclass
class RunSummary():
    processed: int
    cancelled: int
    by_kind: dict
    t_end: float


class Simulator():
    """Single-threaded event loop; handlers are registered per event kind"""

    def __init__(self):
        self.clock = SimClock()
        self.handlers = dict()
        self._queue = []
        self._sequence = 0

    @property
    def now(self):
        return self.clock.now

    @property
    def pending(self):
        return sum(1 for ev in self._queue if not ev.cancelled)

    def on(self, kind, handler):
        """Register `handler(event)` for an event kind"""

        self.handlers[kind] = handler

    def schedule(self, fire_time, kind, payload=None):
        """Enqueue an event and return it as the cancellation handle"""

        if fire_time < self.clock.now:
            raise SchedulingError(f"cannot schedule {kind.value} at {fire_time} before now={self.clock.now}")

        event = Event(fire_time, self._sequence, kind, payload)
        self._sequence += 1
        heapq.heappush(self._queue, event)

        return event

    def cancel(self, event):
        event.cancelled = True

    def run_until(self, t_end):
        """Process every event with fire_time <= t_end, then set the clock to t_end"""

        if t_end < self.clock.now:
            raise SchedulingError(f"t_end={t_end} is before now={self.clock.now}")

        processed, cancelled = 0, 0
        by_kind = {kind.value: 0 for kind in EventKind}

        while self._queue and self._queue[0].fire_time <= t_end:
            event = heapq.heappop(self._queue)

            if event.cancelled:
                cancelled += 1
                continue

            self.clock.advance(event.fire_time)
            handler = self.handlers.get(event.kind)

            if handler is None:
                raise SchedulingError(f"no handler registered for {event.kind.value}")

            handler(event)
            processed += 1
            by_kind[event.kind.value] += 1

        self.clock.advance(t_end)
        logger.debug("run_until t=%.3f processed=%d cancelled=%d", t_end, processed, cancelled)

        return RunSummary(processed=processed, cancelled=cancelled, by_kind=by_kind, t_end=t_end)


class RandomStream():
    """numpy Generator serving draws from pre-filled blocks"""

    def __init__(self, seed, name, block=4096):
        self.name = name
        self.block = block
        seq = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
        self.rng = np.random.default_rng(seq)
        self._exp, self._uni = [], []

    def exponential(self, mean=1.0):
        if not self._exp:
            self._exp = self.rng.standard_exponential(self.block).tolist()
            self._exp.reverse()
        return self._exp.pop() * mean

    def uniform(self, low=0.0, high=1.0):
        if not self._uni:
            self._uni = self.rng.random(self.block).tolist()
            self._uni.reverse()
        return low + (high - low) * self._uni.pop()


class RandomStreams():
    """Registry of named streams derived from one run seed"""

    def __init__(self, seed):
        self.seed = seed
        self._streams = dict()

    def get(self, name):
        if name not in self._streams:
            self._streams[name] = RandomStream(self.seed, name)
        return self._streams[name]


def poisson_interarrival(stream, rate):
    """Exponential delay with mean 1/rate drawn from `stream` only"""

    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")

    return stream.exponential(1.0 / rate)


class Aggregation(Enum):
    SUM = "sum"
    MEAN = "mean"
    LAST = "last"


class MetricSeries():
    """(time, value) samples with non-decreasing times; windows are half-open (start, end]"""

    def __init__(self, name, aggregation=Aggregation.SUM):
        self.name = name
        self.aggregation = aggregation
        self.times = array("d")
        self.values = array("d")

    def __len__(self):
        return len(self.times)

    def record(self, t, value=1.0):
        if self.times and t < self.times[-1]:
            raise ValueError(f"{self.name}: sample at {t} precedes {self.times[-1]}")

        self.times.append(t)
        self.values.append(value)

    def _bounds(self, start, end):
        return bisect.bisect_right(self.times, start), bisect.bisect_right(self.times, end)

    def count(self, start, end):
        lo, hi = self._bounds(start, end)
        return hi - lo

    def total(self, start, end):
        lo, hi = self._bounds(start, end)
        return float(sum(self.values[lo:hi]))

    def mean(self, start, end):
        lo, hi = self._bounds(start, end)
        return float(sum(self.values[lo:hi]) / (hi - lo)) if hi > lo else 0.0

    def last(self, start, end):
        lo, hi = self._bounds(start, end)
        return float(self.values[hi - 1]) if hi > lo else 0.0

    def window(self, start, end):
        """Aggregate the window with the series' own aggregation"""

        return getattr(self, {"sum": "total", "mean": "mean", "last": "last"}[self.aggregation.value])(start, end)

    def rate(self, start, end):
        """Samples per unit time over the window"""

        return self.count(start, end) / (end - start) if end > start else 0.0

    def rows(self):
        return list(zip(self.times, self.values))
