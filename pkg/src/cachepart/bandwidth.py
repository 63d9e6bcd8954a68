"""Joint partitioning and routing under per-link bandwidth limits.

With a cap ``V_km`` on the request volume provider ``k`` may send to cache
``m``, an optimal routing saturates a set ``I(k)`` of links and sends the
remainder to at most one further cache ``s``.  The solver enumerates those
structures per provider, combines them, and solves the (convex) allocation
for each combination.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .alloc import DEFAULT_CAP, InstanceTooLarge, Objective, solve_allocation
from .model import Scenario, ScenarioError, Violation, require_valid

__all__ = [
    "BandwidthRouting",
    "provider_structures",
    "enumerate_bandwidth_routings",
    "routing_matrix",
    "solve_bandwidth",
]

_EPS = 1e-12


@dataclass(frozen=True)
class BandwidthRouting:
    """Routing structure of one provider.

    ``saturated`` caches receive exactly their volume limit; ``residual``
    (``None`` when nothing is left) receives ``residual_fraction`` of the
    provider's requests.
    """

    provider: int
    saturated: tuple
    residual: Optional[int]
    residual_fraction: float

    def row(self, scenario: Scenario) -> np.ndarray:
        R = scenario.providers[self.provider].aggregate_rate
        p = np.zeros(scenario.M)
        for m in self.saturated:
            p[m] = scenario.bandwidth[self.provider, m] / R
        if self.residual is not None:
            p[self.residual] = self.residual_fraction
        return p

    def label(self) -> str:
        sat = "{" + ",".join(f"Cache {m + 1}" for m in self.saturated) + "}"
        if self.residual is None:
            return f"CP {self.provider + 1}: I={sat}"
        return (f"CP {self.provider + 1}: I={sat}, s=Cache {self.residual + 1}, "
                f"residual={self.residual_fraction:.4g}")


def _require_bandwidth(scenario: Scenario):
    if scenario.bandwidth is None:
        raise ScenarioError([Violation("missing_bandwidth", "scenario has no bandwidth limits")])
    require_valid(scenario)


def provider_structures(scenario: Scenario, k: int) -> list[BandwidthRouting]:
    """Every saturated-set/residual structure of provider ``k``, without duplicates."""
    R = scenario.providers[k].aggregate_rate
    V = scenario.bandwidth[k]
    conn = [m for m in scenario.connected[k] if V[m] > 0]
    out, seen = [], set()
    for r in range(len(conn) + 1):
        for sat in itertools.combinations(conn, r):
            vol = float(sum(V[m] for m in sat))
            if vol > R * (1 + _EPS):
                continue
            left = R - vol
            if left <= R * _EPS:
                cands = [BandwidthRouting(k, sat, None, 0.0)]
            else:
                cands = [BandwidthRouting(k, sat, s, left / R)
                         for s in conn if s not in sat and V[s] >= left * (1 - _EPS)]
            for c in cands:
                key = tuple(np.round(c.row(scenario), 12))
                if key not in seen:
                    seen.add(key)
                    out.append(c)
    return out


def enumerate_bandwidth_routings(scenario: Scenario) -> list[tuple]:
    """All combinations of per-provider structures (one tuple per combination)."""
    _require_bandwidth(scenario)
    per_cp = [provider_structures(scenario, k) for k in range(scenario.K)]
    return list(itertools.product(*per_cp))


def routing_matrix(scenario: Scenario, combo) -> np.ndarray:
    return np.array([s.row(scenario) for s in combo])


def solve_bandwidth(scenario: Scenario, cap: int = DEFAULT_CAP,
                    objective: Optional[Objective] = None, return_all: bool = False):
    """Best bandwidth-feasible structure with its optimal partition.

    Raises :class:`InstanceTooLarge` (pointing at ACS, whose routing block
    honours the volume limits) when the structure count exceeds ``cap``.
    """
    _require_bandwidth(scenario)
    per_cp = [provider_structures(scenario, k) for k in range(scenario.K)]
    L = math.prod(len(p) for p in per_cp)
    if L > cap:
        raise InstanceTooLarge(
            f"instance too large: {L} bandwidth structures exceed the cap {cap}; "
            f"use solve_acs (its routing block respects bandwidth limits)")
    obj = objective or Objective(scenario)
    memo: dict = {}
    best, every = None, []
    for combo in itertools.product(*per_cp):
        P = routing_matrix(scenario, combo)
        C, prices = solve_allocation(obj, P, memo=memo)
        sol = obj.solution(C, P, tuple(s.label() for s in combo),
                           {"structures": combo, "prices": prices.tolist()})
        if return_all:
            every.append(sol)
        if best is None or sol.objective > best.objective:
            best = sol
    best.info["structures_evaluated"] = L
    return (best, every) if return_all else best
