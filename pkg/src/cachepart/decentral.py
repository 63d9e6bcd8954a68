"""Price-based decentralized mechanism.

Caches post a price per file of storage.  Each round every provider
computes, from the posted prices alone, the slices that maximise its own
weighted utility minus the storage bill; then every cache moves its price
along the projected subgradient ``[price + gamma * (demand - capacity)]^+``.
Rounds are synchronous: all providers answer the same price vector, then all
caches update.  Running one such iteration per structural routing and
keeping the best converged outcome recovers the centralized optimum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alloc import (Objective, RoutingConfig, _respond, _Participant, structural_routings,
                    DEFAULT_CAP, InstanceTooLarge)
from .model import Scenario, Solution

__all__ = [
    "PriceState",
    "CpBid",
    "Trace",
    "cp_best_response",
    "price_update",
    "run_routing",
    "run_parallel_exploration",
    "run_links",
    "run_routing_bandwidth",
]

WINDOW = 100


@dataclass
class PriceState:
    prices: np.ndarray
    demands: np.ndarray
    round: int = 0
    step: float = 1e-6

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if np.any(np.asarray(self.prices) < 0):
            raise ValueError("prices must be nonnegative")


@dataclass(frozen=True)
class CpBid:
    provider: int
    routing: object
    required_cache_size: float
    utility_at_bid: float


@dataclass
class Trace:
    """Per-round prices, demands and hit rates of one run."""

    prices: list = field(default_factory=list)       # (M,) per round
    demands: list = field(default_factory=list)      # (K, M) per round
    hit_rates: list = field(default_factory=list)    # (K,) per round
    converged: bool = False
    rounds: int = 0
    overshoot: float = 0.0
    label: tuple = ()

    def violation_norms(self, capacities: np.ndarray) -> np.ndarray:
        """Euclidean norm of capacity overshoot per round."""
        D = np.array(self.demands).sum(axis=1)
        return np.linalg.norm(np.maximum(D - capacities, 0.0), axis=1)

    def rows(self):
        """``(round, kind, index, value)`` tidy rows for CSV."""
        for t, (p, d, h) in enumerate(zip(self.prices, self.demands, self.hit_rates)):
            for m, v in enumerate(p):
                yield t, "price", m, float(v)
            for k, row in enumerate(d):
                yield t, "demand", k, float(row.sum())
            for k, v in enumerate(h):
                yield t, "hit_rate", k, float(v)


def price_update(state: PriceState, m: int, total_demand: float, capacity: float) -> float:
    """Projected subgradient step for cache ``m``."""
    return max(0.0, float(state.prices[m]) + state.step * (total_demand - capacity))


def _links_for_routing(scenario: Scenario, routing: RoutingConfig):
    return [[(routing.assignment[k], 1.0)] for k in range(scenario.K)]


def _best_response(obj: Objective, k: int, links, prices, start=None, sweeps: int = 100):
    """Slices of provider ``k`` maximising ``w V(s) - sum_m price_m C_km``.

    Returns ``(C, H)``: the slice per cache and the full-stream hit rate of
    each slice (zero off the provider's links).
    """
    M = obj.scenario.M
    C = np.zeros(M) if start is None else start.copy()
    H = np.zeros(M)
    if len(links) > 1:
        for m, _ in links:
            cv = obj.curves[k][m]
            H[m] = cv.hit_rate(min(C[m], cv.N)) if C[m] > 0 else 0.0
    offset = sum(p * obj.offset[k, m] for m, p in links)
    deriv = (lambda s, _k=k: obj.deriv_k(_k, s))
    rounds = 1 if (len(links) == 1 or obj.scenario.providers[k].utility.kind == "linear") \
        else sweeps
    for _ in range(rounds):
        before = C.copy()
        for m, p in links:
            base = offset + sum(p2 * obj.coef[k, m2] * H[m2] for m2, p2 in links if m2 != m)
            part = _Participant(k, obj.curves[k][m], obj.weights[k], p * obj.coef[k, m],
                                base, deriv)
            C[m], T = _respond(part, float(prices[m]))
            H[m] = obj.curves[k][m].hit_rate_at(T)
        if np.allclose(C, before, rtol=1e-12, atol=1e-9):
            break
    return C, H


def cp_best_response(objective: Objective, k: int, cache: int, price: float) -> CpBid:
    """Provider ``k``'s demand at ``cache`` when routing its whole stream there."""
    prices = np.zeros(objective.scenario.M)
    prices[cache] = price
    C, _ = _best_response(objective, k, [(cache, 1.0)], prices)
    P = np.zeros((objective.scenario.K, objective.scenario.M))
    P[k, cache] = 1.0
    Cm = np.zeros_like(P)
    Cm[k] = C
    s = objective.scores(Cm, P)[k]
    return CpBid(k, cache, float(C[cache]),
                 float(objective.weights[k] * objective.value_k(k, s)))


def run_links(obj: Objective, P: np.ndarray, links: Sequence, gamma: float = 1e-6,
              max_rounds: int = 200_000, stop_tol: float = 1e-8,
              init_prices: Optional[np.ndarray] = None, label=(),
              schedule: str = "constant") -> tuple[Solution, Trace]:
    """Synchronous price iteration for fixed routing ``P`` (``links[k]`` = [(m, p_km)])."""
    sc = obj.scenario
    K, M = sc.K, sc.M
    caps = sc.capacities
    state = PriceState(np.zeros(M) if init_prices is None else np.array(init_prices, float),
                       np.zeros((K, M)), 0, gamma)
    trace = Trace(label=tuple(label))
    window: list = []
    for t in range(max_rounds):
        D = np.zeros((K, M))
        hits = np.zeros(K)
        for k in range(K):
            D[k], H = _best_response(obj, k, links[k], state.prices,
                                     state.demands[k] if t else None)
            hits[k] = float((P[k] * H).sum())
        state.demands = D
        trace.prices.append(state.prices.copy())
        trace.demands.append(D)
        trace.hit_rates.append(hits)
        step = gamma if schedule == "constant" else gamma / math.sqrt(t + 1)
        state.step = step
        new = np.array([price_update(state, m, D[:, m].sum(), caps[m]) for m in range(M)])
        state.prices = new
        state.round = t + 1
        window.append(new)
        if len(window) > WINDOW:
            window.pop(0)
        if len(window) == WINDOW:
            W = np.array(window)
            if float((W.max(axis=0) - W.min(axis=0)).max()) < stop_tol:
                trace.converged = True
                break
    trace.rounds = state.round
    # restore feasibility of the last demands
    D = state.demands.copy()
    used = D.sum(axis=0)
    over = np.where(used > caps, used / caps - 1.0, 0.0)
    trace.overshoot = float(over.max(initial=0.0))
    for m in range(M):
        if used[m] > caps[m]:
            D[:, m] *= caps[m] / used[m]
    sol = obj.solution(D, P, label, {
        "prices": state.prices.tolist(),
        "rounds": trace.rounds,
        "converged": trace.converged,
        "overshoot": trace.overshoot,
    })
    return sol, trace


def run_routing(scenario: Scenario, routing: RoutingConfig, gamma: float = 1e-6,
                max_rounds: int = 200_000, stop_tol: float = 1e-8,
                objective: Optional[Objective] = None, init_prices=None,
                schedule: str = "constant") -> tuple[Solution, Trace]:
    """Price iteration for one single-cache routing."""
    obj = objective or Objective(scenario)
    routing.check(scenario)
    P = routing.matrix(scenario.K, scenario.M)
    return run_links(obj, P, _links_for_routing(scenario, routing), gamma, max_rounds,
                     stop_tol, init_prices, routing.label(), schedule)


def run_routing_bandwidth(scenario: Scenario, combo, gamma: float = 1e-6,
                          max_rounds: int = 200_000, stop_tol: float = 1e-8,
                          objective: Optional[Objective] = None, init_prices=None,
                          schedule: str = "constant") -> tuple[Solution, Trace]:
    """Price iteration for one bandwidth structure (one entry per provider)."""
    from .bandwidth import routing_matrix

    if scenario.bandwidth is None:
        raise ValueError("bandwidth structures need bandwidth limits")
    if len(combo) != scenario.K or [c.provider for c in combo] != list(range(scenario.K)):
        raise ValueError("need one structure per provider, in provider order")
    obj = objective or Objective(scenario)
    P = routing_matrix(scenario, combo)
    R = np.array([p.aggregate_rate for p in scenario.providers])
    if (np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9) or np.any(P > scenario.adjacency + 1e-12)
            or np.any(P * R[:, None] > scenario.bandwidth * (1 + 1e-12))):
        raise ValueError("infeasible bandwidth structure")
    links = [[(int(m), float(P[k, m])) for m in np.flatnonzero(P[k] > 0)]
             for k in range(scenario.K)]
    return run_links(obj, P, links, gamma, max_rounds, stop_tol, init_prices,
                     tuple(s.label() for s in combo), schedule)


def run_parallel_exploration(scenario: Scenario, gamma: float = 1e-6,
                             max_rounds: int = 200_000, stop_tol: float = 1e-8,
                             objective: Optional[Objective] = None,
                             cap: int = DEFAULT_CAP, schedule: str = "constant"):
    """Run the price iteration under every single-cache routing; keep the best.

    Returns ``(best_solution, [(solution, trace), ...])`` in routing order.
    The winner's ``info['all_converged']`` reports whether every run
    converged.
    """
    if scenario.routing_count() > cap:
        raise InstanceTooLarge(
            f"{scenario.routing_count()} routings exceed the cap {cap}; use ACS")
    obj = objective or Objective(scenario)
    runs = [run_routing(scenario, r, gamma, max_rounds, stop_tol, obj, schedule=schedule)
            for r in structural_routings(scenario)]
    best = None
    for sol, _ in runs:
        if best is None or sol.objective > best.objective:
            best = sol
    best.info["all_converged"] = all(tr.converged for _, tr in runs)
    return best, runs
