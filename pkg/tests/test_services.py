import pytest
from pydantic import ValidationError

from data.generator import TrafficGenerator
from tool.analytics import StableLoadModel, mm1m_rejection_prob
from tool.engine import EventKind, MetricSeries, RandomStreams, Simulator, poisson_interarrival
from tool.policies import RetryPolicy, RetryPolicySpec
from tool.retryguard import ControllerConfig, Mode, RetryGuard, apply_mode
from tool.services import (Autoscaler, AutoscalerSpec, Burst, Origin, Request, RequestState, ServiceNode,
                           TrafficChange, TrafficProfile, offer, scaler_tick, upstream_hold_and_retry)


def node(model="mm1m", **kwargs):
    sim, streams = Simulator(), RandomStreams(4)
    return ServiceNode("B", model=model, sim=sim, streams=streams, **kwargs)


def fresh(i, t=0.0):
    return Request(id=i, arrival_time=t)


def blocking_fraction(rho, m, arrivals, seed=4):
    sim, streams = Simulator(), RandomStreams(seed)
    b = ServiceNode("B", model="mm1m", capacity=1.0, buffer_size=m, sim=sim, streams=streams)
    stream = streams.get("arrivals")
    counter = [0]

    def arrival(ev):
        counter[0] += 1
        offer(b, fresh(counter[0], ev.fire_time), ev.fire_time)
        if counter[0] < arrivals:
            sim.schedule(ev.fire_time + poisson_interarrival(stream, rho), EventKind.ARRIVAL)

    def complete(ev):
        service, request = ev.payload
        request.advance(RequestState.SUCCEEDED)
        service.complete(request, ev.fire_time)

    sim.on(EventKind.ARRIVAL, arrival)
    sim.on(EventKind.SERVICE_COMPLETE, complete)
    sim.schedule(poisson_interarrival(stream, rho), EventKind.ARRIVAL)
    sim.run_until(arrivals / rho * 2)

    return b.series["rejections"].count(-1.0, sim.now) / b.series["offers"].count(-1.0, sim.now)


class TestRequest:

    def test_retry_increments_attempt(self):
        request = fresh(1)
        request.advance(RequestState.AWAITING_RETRY)
        request.advance(RequestState.PENDING)

        assert request.attempt == 1

    def test_illegal_transition(self):
        request = fresh(1)
        with pytest.raises(ValueError, match="illegal"):
            request.advance(RequestState.SUCCEEDED)

    def test_terminal_states(self):
        request = fresh(1)
        request.advance(RequestState.IN_SERVICE)
        request.advance(RequestState.SUCCEEDED)

        assert request.finished
        with pytest.raises(ValueError):
            request.advance(RequestState.AWAITING_RETRY)


class TestOffer:

    def test_empty_node_accepts(self):
        b = node(capacity=1.0, buffer_size=2)
        request = fresh(1)

        assert offer(b, request, 0.0)
        assert request.state == RequestState.IN_SERVICE

    def test_full_buffer_rejects(self):
        b = node(capacity=1.0, buffer_size=2)
        assert offer(b, fresh(1), 0.0)
        assert offer(b, fresh(2), 0.0)

        third = fresh(3)
        assert not offer(b, third, 0.0)
        assert third.state == RequestState.AWAITING_RETRY
        assert b.series["rejections"].count(-1.0, 0.0) == 1

    def test_capacity_slot_tokens(self):
        b = node("capacity-slot", capacity=1.0, slot_interval=2.0, service_time=0.1)

        assert [offer(b, fresh(i), 0.0) for i in range(3)] == [True, True, False]
        assert offer(b, fresh(4), 1.0)
        assert not offer(b, fresh(5), 1.0)

    def test_bernoulli_extremes(self):
        assert not offer(node("bernoulli", reject_prob=1.0), fresh(1), 0.0)
        assert offer(node("bernoulli", reject_prob=0.0, service_time=0.1), fresh(1), 0.0)

    def test_unbounded_never_rejects(self):
        a = node("unbounded", capacity=0.0, service_time=0.1)
        assert all(offer(a, fresh(i), 0.0) for i in range(1000))

    def test_mm1m_blocking_probability(self):
        expected = mm1m_rejection_prob(StableLoadModel(rho=0.5, m=2))
        assert blocking_fraction(0.5, 2, 200_000) == pytest.approx(expected, abs=0.005)

    @pytest.mark.slow
    def test_mm1m_blocking_probability_long_run(self):
        assert blocking_fraction(0.5, 2, 1_000_000, seed=11) == pytest.approx(0.1429, abs=0.003)


class TestAutoscaler:

    def test_inflated_measurement_over_scales(self):
        scaler = Autoscaler(AutoscalerSpec(kind="target-tracking", target_utilization=0.9), 383)
        capacity = scaler.tick(60.0, 403, 383)

        assert capacity == pytest.approx(448, abs=0.5)
        assert scaler.tick(120.0, 403, capacity) is None

    def test_decision_delay(self):
        scaler = Autoscaler(AutoscalerSpec(target_utilization=0.9, decision_delay=600), 100)

        assert scaler.tick(60.0, 180, 100) is None
        # pending decision blocks new ones
        assert scaler.tick(120.0, 900, 100) is None
        assert scaler.tick(660.0, 900, 100) == pytest.approx(200)

    def test_instant_doubles(self):
        scaler = Autoscaler(AutoscalerSpec(kind="instant", target_utilization=1.0), 100)
        assert scaler.tick(1.0, 200, 100) == pytest.approx(200)

    def test_instant_respects_max(self):
        scaler = Autoscaler(AutoscalerSpec(kind="instant", target_utilization=1.0, max_capacity=150), 100)
        assert scaler.tick(1.0, 200, 100) == 150

    def test_scale_down_hold(self):
        scaler = Autoscaler(AutoscalerSpec(scale_down_hold=900), 448)

        assert scaler.tick(60.0, 100, 448) is None
        assert scaler.tick(600.0, 100, 448) is None
        assert scaler.tick(960.0, 100, 448) == pytest.approx(100 / 0.9)

    def test_hold_restarts_after_normal_load(self):
        scaler = Autoscaler(AutoscalerSpec(scale_down_hold=120), 100)

        assert scaler.tick(60.0, 10, 100) is None
        assert scaler.tick(120.0, 90, 100) is None
        assert scaler.tick(180.0, 10, 100) is None
        assert scaler.tick(300.0, 10, 100) == pytest.approx(10 / 0.9)

    def test_hpa_scale_up(self):
        scaler = Autoscaler(AutoscalerSpec(kind="hpa-like", replica_unit=10), 100)

        assert scaler.tick(60.0, 150, 100) == pytest.approx(170)
        assert scaler.replicas == 17

    def test_hpa_within_tolerance(self):
        scaler = Autoscaler(AutoscalerSpec(kind="hpa-like", replica_unit=10, tolerance=0.1), 100)
        assert scaler.tick(60.0, 95, 100) is None

    def test_hpa_scale_down_stabilized(self):
        spec = AutoscalerSpec(kind="hpa-like", replica_unit=10, scale_down_hold=0, stabilization_window=60)
        scaler = Autoscaler(spec, 100)

        assert scaler.tick(0.0, 90, 100) is None
        assert scaler.tick(30.0, 45, 100) is None
        assert scaler.tick(90.0, 45, 100) == pytest.approx(50)
        assert scaler.replicas == 5

    def test_bounds_validated(self):
        with pytest.raises(ValidationError):
            AutoscalerSpec(min_capacity=10, max_capacity=5)

    def test_scaler_tick_uses_offered_rate(self):
        b = node(capacity=383, scaler=AutoscalerSpec(target_utilization=0.9, measurement_window=60))
        for i in range(403 * 60):
            b.series["offers"].record(60.0 * (i + 1) / (403 * 60))

        assert scaler_tick(b, 60.0) == pytest.approx(403 / 0.9)
        assert b.capacity == pytest.approx(403 / 0.9)
        assert b.series["capacity"].last(0.0, 60.0) == pytest.approx(403 / 0.9)

    def test_no_scaler(self):
        assert scaler_tick(node(capacity=10), 60.0) is None

    def test_instant_scaler_stops_rejections(self):
        spec = AutoscalerSpec(kind="instant", target_utilization=0.9, tick_period=5, measurement_window=5)
        b = node("capacity-slot", capacity=10.0, service_time=0.01, scaler=spec)
        rejected = []

        for i in range(1, 801):
            now = i / 40
            if not offer(b, fresh(i, now), now):
                rejected.append(now)
            if i % 200 == 0:
                scaler_tick(b, now)

        assert b.capacity == pytest.approx(40 / 0.9)
        assert rejected and max(rejected) <= 5.0


class TestHoldAndRetry:

    def prepare(self, kind="legacy", max_attempts=2, attempt=0, deadline=None):
        sim = Simulator()
        a = ServiceNode("A", model="unbounded", capacity=0.0, sim=sim)
        a.series["retries"] = MetricSeries("A.retries")
        policy = RetryPolicy(RetryPolicySpec(kind=kind, max_attempts=max_attempts), RandomStreams(2).get("jitter"))
        request = Request(id=1, arrival_time=0.0, attempt=attempt, deadline=deadline,
                          state=RequestState.AWAITING_RETRY)
        return sim, a, policy, request

    def test_last_attempt_fails(self):
        sim, a, policy, request = self.prepare(attempt=2)

        assert upstream_hold_and_retry(a, request, policy, sim, 5.0) is None
        assert request.state == RequestState.FAILED
        assert request.completion_time == 5.0
        assert sim.pending == 0

    def test_backoff_grows(self):
        sim, a, policy, request = self.prepare(attempt=0)
        assert upstream_hold_and_retry(a, request, policy, sim, 5.0).fire_time == 6.0

        sim, a, policy, request = self.prepare(attempt=1)
        event = upstream_hold_and_retry(a, request, policy, sim, 5.0)
        assert event.fire_time == 7.0
        assert event.kind == EventKind.RETRY_FIRE
        assert a.series["retries"].count(0.0, 5.0) == 1

    def test_deadline_passes_during_wait(self):
        sim, a, policy, request = self.prepare(attempt=1, deadline=6.0)

        assert upstream_hold_and_retry(a, request, policy, sim, 5.0) is None
        assert request.state == RequestState.FAILED

    def test_deadline_drop_keeps_tokens(self):
        sim, a, _, request = self.prepare(attempt=1, deadline=6.0)
        policy = RetryPolicy(RetryPolicySpec(kind="adaptive", jitter="none", max_attempts=2, bucket_capacity=3.0))

        assert upstream_hold_and_retry(a, request, policy, sim, 5.0) is None
        assert policy.tokens == 3.0

    def test_no_retry_policy(self):
        sim, a, policy, request = self.prepare(kind="none")
        assert upstream_hold_and_retry(a, request, policy, sim, 1.0) is None

    def test_guard_off_fails_immediately(self):
        sim, a, policy, request = self.prepare()
        guard = RetryGuard(ControllerConfig(initial_mode=Mode.OFF), metrics={})

        assert upstream_hold_and_retry(a, request, apply_mode(policy, guard), sim, 1.0) is None
        assert request.state == RequestState.FAILED
        assert a.series["retries"].count(0.0, 10.0) == 0


class TestTrafficProfile:

    def test_rate_steps(self):
        profile = TrafficProfile(base_rate=40, changes=[TrafficChange(time=300, rate=120)])
        sim = Simulator()
        generator = TrafficGenerator(profile, sim, RandomStreams(1), lambda origin, now: None)
        sim.on(EventKind.ARRIVAL, generator.on_arrival)
        sim.on(EventKind.TRAFFIC_CHANGE, generator.on_change)

        generator.start()
        sim.run_until(299.9)
        assert generator.rate[Origin.FRESH] == 40
        sim.run_until(300.0)
        assert generator.rate[Origin.FRESH] == 120

    def test_repeated_bursts(self):
        profile = TrafficProfile(base_rate=1, bursts=[Burst(start=100, duration=10, extra_rate=50,
                                                            period=60, repetitions=3)])

        assert profile.burst_windows() == [(100, 110, 50), (160, 170, 50), (220, 230, 50)]

    def test_overlapping_repetitions_rejected(self):
        with pytest.raises(ValidationError):
            Burst(start=0, duration=10, extra_rate=5, period=5, repetitions=2)

    def test_unordered_changes_rejected(self):
        with pytest.raises(ValidationError):
            TrafficProfile(base_rate=1, changes=[TrafficChange(time=10, rate=2), TrafficChange(time=5, rate=3)])
