"""
Closed-form load, rejection and delay model of the tandem retry system.
 * Overload side (arrival rate above downstream capacity): rejection probability, offered rate, per-stage retry rates.
 * Expected exponential backoff delay under truncated geometric retries.
 * Stable side: blocking probability of the M/M/1/m queue.
 * Brute-force oracles for every closed form (damped fixed point and birth-death solver).
"""

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when a formula is evaluated outside its domain"""


@dataclass(frozen=True)
class OverloadModel():
    """
    Fluid model of a downstream service receiving fresh traffic plus retries.
    `k` is the number of attempt stages offered downstream (k=1 means a single attempt).
    """

    lam: float
    mu: float
    k: int

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise DomainError(f"rates must be positive (lambda={self.lam}, mu={self.mu})")

        if self.k < 0:
            raise DomainError(f"k must be non-negative, got {self.k}")

    @property
    def rho(self):
        return self.lam / self.mu

    def check_overload(self):
        if self.lam <= self.mu:
            raise DomainError(f"overload formulas need lambda > mu, got rho={self.rho:.6g}; use the M/M/1/m path")

        if self.k == 0:
            raise DomainError("overload formulas need at least one attempt stage (k >= 1)")


@dataclass(frozen=True)
class StableLoadModel():
    """Utilization and system capacity of an M/M/1/m queue"""

    rho: float
    m: int

    def __post_init__(self):
        if self.rho < 0:
            raise DomainError(f"utilization must be non-negative, got {self.rho}")

        if self.m < 1:
            raise DomainError(f"system capacity must be at least 1, got {self.m}")


@dataclass(frozen=True)
class AnalyticSolution():
    p_tilde: float
    p: float
    big_lambda: float
    lambda_i: tuple = field(default_factory=tuple)
    expected_delay: float = 0.0


@dataclass(frozen=True)
class CurvePoint():
    rho: float
    value: float
    regime: str


def overload_rejection_prob(model):
    """Rejection probability of an arbitrary attempt, p~ = (1 - mu/lambda)^(1/k)"""

    model.check_overload()
    return (1.0 - model.mu / model.lam) ** (1.0 / model.k)


def overload_offered_rate(model):
    """Total rate reaching downstream, fresh plus forwarded retries"""

    p_tilde = overload_rejection_prob(model)
    return model.lam * (1.0 - p_tilde ** model.k) / (1.0 - p_tilde)


def retry_stage_rate(model, i):
    """Rate of requests in their i-th retry; stage k is the finally failed stream"""

    if i < 0 or i > model.k:
        raise IndexError(f"stage {i} outside 0..{model.k}")

    if i == 0:
        return model.lam

    return model.lam * overload_rejection_prob(model) ** i


def overload_oracle(model, damping=0.5, tol=1e-12, max_iter=1_000_000):
    """
    Damped fixed-point iteration on the stage recursion lambda_i = p~ * lambda_{i-1},
    with p~ = 1 - mu / sum(lambda_0..lambda_{k-1}). Returns (p_tilde, stage rates).
    """

    model.check_overload()
    p_tilde = 0.5

    for _ in range(max_iter):
        rates = model.lam * np.power(p_tilde, np.arange(model.k))
        update = 1.0 - model.mu / math.fsum(rates)
        nxt = damping * p_tilde + (1.0 - damping) * update

        if abs(nxt - p_tilde) < tol:
            p_tilde = nxt
            break

        p_tilde = nxt
    else:
        raise DomainError(f"fixed point did not converge in {max_iter} iterations")

    return p_tilde, model.lam * np.power(p_tilde, np.arange(model.k + 1))


def solve_overload(model):
    """Bundle every overload quantity for one model"""

    p_tilde = overload_rejection_prob(model)
    stages = tuple(retry_stage_rate(model, i) for i in range(model.k + 1))

    return AnalyticSolution(p_tilde=p_tilde,
                            p=1.0 - p_tilde,
                            big_lambda=overload_offered_rate(model),
                            lambda_i=stages,
                            expected_delay=expected_backoff_delay(p_tilde, model.k))


def retry_count_pmf(p_tilde, k):
    """Truncated geometric distribution of the number of retries X in 0..k"""

    if not 0.0 <= p_tilde <= 1.0:
        raise DomainError(f"probability outside [0, 1]: {p_tilde}")

    if k < 0:
        raise DomainError(f"k must be non-negative, got {k}")

    p = 1.0 - p_tilde
    pmf = [p_tilde ** i * p for i in range(k)]
    pmf.append(p_tilde ** k)

    return pmf


def expected_backoff_delay(p_tilde, k):
    """
    Expected total backoff wait, in base units, with at most `k` retries.
    Retry i waits 2^(i-1) units, so X retries wait 2^X - 1 in total.
    """

    pmf = retry_count_pmf(p_tilde, k)
    return math.fsum(pr * (2 ** i - 1) for i, pr in enumerate(pmf))


def backoff_delay_closed_form(p_tilde, k):
    """Closed form of `expected_backoff_delay`, singular at p~ = 1/2 and p~ = 1"""

    if math.isclose(p_tilde, 0.5) or math.isclose(p_tilde, 1.0):
        raise DomainError(f"closed form is singular at p~={p_tilde}; use direct summation")

    p = 1.0 - p_tilde
    doubling = p * ((2.0 * p_tilde) ** k - 1.0) / (2.0 * p_tilde - 1.0)
    geometric = p * (p_tilde ** k - 1.0) / (p_tilde - 1.0)

    return doubling - geometric + p_tilde ** k * (2 ** k - 1)


def mm1m_rejection_prob(model):
    """Blocking probability (1-rho) rho^m / (1 - rho^(m+1)) of an M/M/1/m queue"""

    rho, m = model.rho, model.m

    if rho == 0:
        return 0.0

    if rho == 1:
        return 1.0 / (m + 1)

    # expm1 keeps precision near rho = 1
    log_rho = math.log(rho)
    num = -math.expm1(log_rho) * math.exp(m * log_rho)
    den = -math.expm1((m + 1) * log_rho)

    return num / den


def mm1m_oracle(model):
    """Steady state of the birth-death generator; returns pi_m"""

    m, rho = model.m, model.rho
    q = np.zeros((m + 1, m + 1))

    for n in range(m):
        q[n, n + 1] = rho
        q[n + 1, n] = 1.0

    np.fill_diagonal(q, -q.sum(axis=1))

    a = np.vstack([q.T, np.ones(m + 1)])
    b = np.zeros(m + 2)
    b[-1] = 1.0
    pi = np.linalg.lstsq(a, b, rcond=None)[0]

    return float(pi[m])


def normalized_retry_curve(rho_grid, k, m):
    """
    Retries per original request as a function of load.
    Stable side uses k times the M/M/1/m blocking, overload side the forwarded retry stages.
    At rho = 1 both one-sided values are emitted.
    """

    if k < 1 or m < 1:
        raise DomainError(f"curve needs k >= 1 and m >= 1, got k={k}, m={m}")

    points = []

    for rho in rho_grid:
        if rho <= 0:
            raise DomainError(f"load must be positive, got {rho}")

        if rho <= 1:
            blocking = mm1m_rejection_prob(StableLoadModel(rho=rho, m=m))
            points.append(CurvePoint(rho=rho, value=k * blocking, regime="stable"))

        if rho >= 1:
            value = 0.0

            if rho > 1:
                p_tilde = overload_rejection_prob(OverloadModel(lam=rho, mu=1.0, k=k))
                value = math.fsum(p_tilde ** i for i in range(1, k))

            points.append(CurvePoint(rho=rho, value=value, regime="overload"))

    return points


def cost_heatmap(rho_range, k_range):
    """Expected backoff delay per (rho, k) cell, with p~ taken from the overload model at the same k"""

    grid = np.zeros((len(rho_range), len(k_range)))

    for r, rho in enumerate(rho_range):
        if rho <= 1:
            raise DomainError(f"heatmap needs rho > 1, got {rho}")

        for c, k in enumerate(k_range):
            p_tilde = overload_rejection_prob(OverloadModel(lam=rho, mu=1.0, k=k))
            grid[r, c] = expected_backoff_delay(p_tilde, k)

    return grid
