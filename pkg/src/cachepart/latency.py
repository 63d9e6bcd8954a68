"""Latency-oriented objective.

A request of provider ``k`` served through cache ``m`` costs ``d_km`` on a
hit and ``d0_km`` on a miss.  The mean latency ``t_k`` is affine in the hit
rates, so the latency problem is the hit-rate problem with per-link
offsets and coefficients:

    tau - t_k = sum_m p_km * ((tau - d0_km) + (d0_km - d_km) / R_k * H_km(C_km))

with ``tau`` the largest miss delay in the scenario.  ``LatencyObjective``
plugs those into the shared solvers in :mod:`cachepart.alloc`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import DEFAULT_CAP, Objective, enumerate_optimal
from .che import curve_for_demand
from .model import ContentProvider, Scenario, ScenarioError, Solution, Violation

__all__ = [
    "DelayProfile",
    "LatencyObjective",
    "mean_latency_km",
    "mean_latency",
    "latency_from_hits",
    "solve_latency",
]


@dataclass(frozen=True)
class DelayProfile:
    hit: float
    miss: float

    def __post_init__(self):
        if not 0 <= self.hit < self.miss:
            raise ValueError("need 0 <= hit delay < miss delay")


def mean_latency_km(provider: ContentProvider, cache, C_km: float, p_km: float,
                    delays: DelayProfile) -> float:
    """Mean latency of the requests provider ``k`` sends through one cache."""
    if not 0 < p_km <= 1:
        raise ValueError("latency through a cache is undefined when p_km = 0")
    curve = curve_for_demand(cache.policy, provider.demand)
    volume = provider.aggregate_rate * p_km
    h = p_km * curve.hit_rate(min(C_km, curve.N))
    return (delays.hit * h + delays.miss * (volume - h)) / volume


def mean_latency(provider: ContentProvider, caches, partition_row, routing_row,
                 hit_delay_row, miss_delay_row) -> float:
    """Overall mean latency ``t_k = sum_m t_km p_km`` of one provider."""
    R = provider.aggregate_rate
    total = 0.0
    for m, cache in enumerate(caches):
        p = float(routing_row[m])
        if p <= 0:
            continue
        curve = curve_for_demand(cache.policy, provider.demand)
        h = p * curve.hit_rate(min(float(partition_row[m]), curve.N))
        total += hit_delay_row[m] * h + miss_delay_row[m] * (R * p - h)
    return total / R


def latency_from_hits(scenario: Scenario, P: np.ndarray, hits: np.ndarray) -> np.ndarray:
    R = np.array([p.aggregate_rate for p in scenario.providers])
    d, d0 = scenario.hit_delay, scenario.miss_delay
    with np.errstate(invalid="ignore"):
        num = np.where(P > 0, d * hits + d0 * (R[:, None] * P - hits), 0.0)
    return num.sum(axis=1) / R


class LatencyObjective(Objective):
    """``sum_k w_k U_k(t_k)`` for utilities concave and decreasing in latency.

    ``negated_latency`` (and ``linear``) give ``U(t) = -t``; ``log`` and
    ``beta_fair`` are applied to the headroom ``tau - t``.
    """

    kind = "latency"

    def __init__(self, scenario: Scenario):
        if not scenario.has_delays:
            raise ScenarioError([Violation("missing_delays",
                                           "latency objective needs hit and miss delays")])
        super().__init__(scenario)
        A = scenario.adjacency > 0
        d, d0 = scenario.hit_delay, scenario.miss_delay
        R = np.array([p.aggregate_rate for p in scenario.providers])
        self.tau = float(d0[A].max())
        self.offset = np.where(A, self.tau - d0, 0.0)
        self.coef = np.where(A, (d0 - d) / R[:, None], 0.0)
        self.linear = all(p.utility.kind in ("linear", "negated_latency")
                          for p in scenario.providers)

    def value_k(self, k, s):
        u = self.scenario.providers[k].utility
        if u.kind in ("linear", "negated_latency"):
            return np.asarray(s, dtype=float) - self.tau
        return u.value(s)

    def deriv_k(self, k, s):
        u = self.scenario.providers[k].utility
        if u.kind in ("linear", "negated_latency"):
            return np.ones_like(np.asarray(s, dtype=float))
        return u.derivative(s)

    def latencies(self, C: np.ndarray, P: np.ndarray) -> np.ndarray:
        return self.tau - self.scores(C, P)


def solve_latency(scenario: Scenario, cap: int = DEFAULT_CAP) -> Solution:
    """Latency-optimal partition and single-cache routing by enumeration."""
    return enumerate_optimal(scenario, LatencyObjective(scenario), cap)
