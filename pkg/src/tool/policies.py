"""
Retry disciplines of the upstream caller.
 * none: never retry.
 * legacy: deterministic exponential backoff.
 * standard: exponential backoff with full jitter.
 * adaptive: standard delays gated by a success-refilled token bucket.
 * budget: retries capped at a fraction of recent fresh requests.
"""

from collections import deque
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RetryPolicySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["none", "legacy", "standard", "adaptive", "budget"] = "standard"
    max_attempts: int = Field(default=5, ge=0, description="maximum retries per request")
    base_delay: float = Field(default=1.0, gt=0)
    max_delay: float = Field(default=20.0, gt=0)
    jitter: Optional[Literal["full", "none"]] = None
    bucket_capacity: float = Field(default=10.0, ge=0)
    bucket_refill_per_success: float = Field(default=0.5, ge=0)
    budget_ratio: float = Field(default=0.2, ge=0)
    budget_window: float = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _delay_cap(self):
        if self.max_delay < self.base_delay:
            raise ValueError(f"max_delay ({self.max_delay}) must be >= base_delay ({self.base_delay})")
        return self

    @property
    def jitter_mode(self):
        if self.jitter is not None:
            return self.jitter
        return "none" if self.kind in ("none", "legacy") else "full"


class RetryPolicy():
    """Runtime state of one policy, owned by one upstream service"""

    def __init__(self, spec, stream=None):
        self.spec = spec
        self.stream = stream
        self.tokens = spec.bucket_capacity
        self.fresh = deque()
        self.issued = deque()
        self._admit = getattr(self, f"_admit_{spec.kind}")

    @property
    def retries_enabled(self):
        return self.spec.kind != "none"

    def backoff(self, attempt):
        """Deterministic backoff for retry number `attempt`, capped at max_delay"""

        return min(self.spec.base_delay * 2 ** (attempt - 1), self.spec.max_delay)

    def total_backoff(self):
        """Upper bound on the time one request spends waiting between attempts"""

        if not self.retries_enabled:
            return 0.0
        return sum(self.backoff(i) for i in range(1, self.spec.max_attempts + 1))

    def next_delay(self, attempt):
        """Delay before retry number `attempt` (1-based)"""

        if self.spec.kind == "none":
            raise ValueError("policy 'none' never schedules retries")

        if not 1 <= attempt <= self.spec.max_attempts:
            raise ValueError(f"attempt {attempt} outside 1..{self.spec.max_attempts}")

        cap = self.backoff(attempt)

        if self.spec.jitter_mode == "full":
            return self.stream.uniform(0.0, cap)

        return cap

    def admit_retry(self, attempt, now):
        """Allow or deny retry number `attempt`; admitted retries consume policy budget"""

        if attempt < 1 or attempt > self.spec.max_attempts:
            return False

        return self._admit(attempt, now)

    def notify_fresh(self, now):
        if self.spec.kind == "budget":
            self.fresh.append(now)

    def notify_success(self, now):
        if self.spec.kind == "adaptive":
            self.tokens = min(self.spec.bucket_capacity, self.tokens + self.spec.bucket_refill_per_success)

    def _admit_none(self, attempt, now):
        return False

    def _admit_legacy(self, attempt, now):
        return True

    def _admit_standard(self, attempt, now):
        return True

    def _admit_adaptive(self, attempt, now):
        if self.tokens < 1.0:
            return False

        self.tokens -= 1.0
        return True

    def _admit_budget(self, attempt, now):
        horizon = now - self.spec.budget_window

        for window in (self.fresh, self.issued):
            while window and window[0] <= horizon:
                window.popleft()

        if len(self.issued) + 1 > self.spec.budget_ratio * len(self.fresh):
            return False

        self.issued.append(now)
        return True
