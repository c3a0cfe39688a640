"""Generator of fresh and burst-attack arrivals from a traffic profile"""

from tool.engine import EventKind, poisson_interarrival
from tool.services import Origin


class TrafficGenerator():
    """
    Poisson arrivals with a piecewise-constant rate.
    Fresh and burst traffic draw from separate named streams, so adding bursts leaves
    the fresh arrival times unchanged. Rate changes resample the pending arrival.
    """

    def __init__(self, profile, sim, streams, emit, bursts=True):
        self.profile = profile
        self.sim = sim
        self.emit = emit
        self.bursts = bursts
        self.rate = {Origin.FRESH: profile.base_rate, Origin.BURST: 0.0}
        self.stream = {Origin.FRESH: streams.get("arrivals.fresh"), Origin.BURST: streams.get("arrivals.burst")}
        self.pending = {Origin.FRESH: None, Origin.BURST: None}

    def start(self):
        for change in self.profile.changes:
            self.sim.schedule(change.time, EventKind.TRAFFIC_CHANGE, (Origin.FRESH, change.rate))

        if self.bursts:
            for start, end, extra in self.profile.burst_windows():
                self.sim.schedule(start, EventKind.TRAFFIC_CHANGE, (Origin.BURST, extra))
                self.sim.schedule(end, EventKind.TRAFFIC_CHANGE, (Origin.BURST, -extra))

        self._arm(Origin.FRESH, self.sim.now)

    def _arm(self, origin, now):
        if self.pending[origin] is not None:
            self.sim.cancel(self.pending[origin])
            self.pending[origin] = None

        if self.rate[origin] > 0:
            delay = poisson_interarrival(self.stream[origin], self.rate[origin])
            self.pending[origin] = self.sim.schedule(now + delay, EventKind.ARRIVAL, origin)

    def on_change(self, event):
        origin, value = event.payload

        if origin == Origin.FRESH:
            self.rate[origin] = value
        else:
            # overlapping bursts stack
            self.rate[origin] = max(0.0, self.rate[origin] + value)
            if self.rate[origin] < 1e-9:
                self.rate[origin] = 0.0

        self._arm(origin, event.fire_time)

    def on_arrival(self, event):
        origin = event.payload
        self.pending[origin] = None
        self._arm(origin, event.fire_time)
        self.emit(origin, event.fire_time)
