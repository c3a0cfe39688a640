"""
Billing ledgers translating simulated activity into abstract cost units.
 * invocation-duration: per request, invocation price plus held seconds (backoff waits included).
 * provisioned-capacity: integral of capacity over time.
 * replica-time: integral of replica count over time.
"""

from dataclasses import dataclass, field
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class PricingRule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["invocation-duration", "provisioned-capacity", "replica-time"] = "invocation-duration"
    price_per_invocation: float = Field(default=0.0, ge=0)
    price_per_second_held: float = Field(default=1.0, ge=0)
    price_per_capacity_unit_second: float = Field(default=0.0, ge=0)
    price_per_replica_second: float = Field(default=0.0, ge=0)


@dataclass
class RequestActivity():
    """A finished (succeeded or failed) upstream request"""

    time: float
    held_seconds: float
    origin: str = "fresh"


@dataclass
class CapacityActivity():
    """Constant capacity (or replica count) over [start, end)"""

    start: float
    end: float
    capacity: float = 0.0
    replicas: float = 0.0


@dataclass
class CostLedger():
    service: str
    accrued: float = 0.0
    breakdown: dict = field(default_factory=dict)
    series: list = field(default_factory=list)

    def add(self, component, amount, t):
        if amount < 0:
            raise ValueError(f"negative charge {amount} for {component}")

        self.accrued += amount
        self.breakdown[component] = self.breakdown.get(component, 0.0) + amount
        self.series.append((t, amount))


def accrue(ledger, rule, activity):
    """Charge one activity record to the ledger according to the pricing rule"""

    if rule.kind == "invocation-duration":
        ledger.add(f"invocation:{activity.origin}", rule.price_per_invocation, activity.time)
        ledger.add(f"held:{activity.origin}", activity.held_seconds * rule.price_per_second_held, activity.time)

    elif rule.kind == "provisioned-capacity":
        span = activity.end - activity.start
        ledger.add("capacity", span * activity.capacity * rule.price_per_capacity_unit_second, activity.end)

    else:
        span = activity.end - activity.start
        ledger.add("replicas", span * activity.replicas * rule.price_per_replica_second, activity.end)

    return ledger


class CapacityMeter():
    """Integrates a piecewise-constant capacity trajectory into a ledger"""

    def __init__(self, ledger, rule, t0, capacity, replicas=0.0):
        self.ledger = ledger
        self.rule = rule
        self.since = t0
        self.capacity = capacity
        self.replicas = replicas

    def update(self, now, capacity, replicas=0.0):
        self.close(now)
        self.capacity, self.replicas = capacity, replicas

    def close(self, now):
        if now > self.since:
            accrue(self.ledger, self.rule, CapacityActivity(self.since, now, self.capacity, self.replicas))
        self.since = now


def relative_billing(totals, baseline):
    """Each policy's total cost as a percentage of the baseline policy's"""

    if baseline not in totals:
        raise ValueError(f"baseline report '{baseline}' missing from {sorted(totals)}")

    base = totals[baseline]
    if base <= 0:
        raise ValueError(f"baseline '{baseline}' has non-positive cost {base}")

    return {name: 100.0 * total / base for name, total in totals.items()}
