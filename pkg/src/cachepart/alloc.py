"""Centralized solvers for joint cache partitioning and request routing.

Every provider ``k`` has a *score* that is linear in its routing row and in
the hit rates of its slices::

    s_k = sum_m p_km * (offset_km + coef_km * H_k,m(C_km))

where ``H_k,m`` is the hit-rate curve of provider ``k``'s full stream under
cache ``m``'s policy.  The objective is ``sum_k w_k V_k(s_k)`` with ``V_k``
concave and increasing.  For hit-rate utilities ``offset = 0``,
``coef = 1`` and ``V = U``; the latency objective (``latency.py``) only
changes these three ingredients, so every solver here serves both.

For a fixed routing the objective is concave in the partition and the
constraints are per cache, so the allocation is solved cache by cache with
KKT marginal equalisation (exact in one pass when every ``V`` is linear or
every provider uses one cache; otherwise by cyclic block ascent over caches).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .che import HitCurve, curve_for_demand
from .model import Scenario, Solution, require_valid

__all__ = [
    "Objective",
    "RoutingConfig",
    "InstanceTooLarge",
    "solve_single_cache",
    "solve_allocation",
    "evaluate_routing",
    "enumerate_optimal",
    "solve_acs",
    "brute_force_probabilistic",
    "random_start",
    "DEFAULT_CAP",
]

DEFAULT_CAP = 10**6


class InstanceTooLarge(RuntimeError):
    """Raised when exhaustive enumeration would exceed the configured cap."""


class Objective:
    """Hit-rate utility objective ``sum_k w_k U_k(h_k)``."""

    kind = "hit"

    def __init__(self, scenario: Scenario, coef: Optional[np.ndarray] = None):
        if type(self) is Objective and any(p.utility.kind == "negated_latency"
                                           for p in scenario.providers):
            raise ValueError("negated_latency utilities need the latency objective")
        self.scenario = scenario
        K, M = scenario.K, scenario.M
        self.weights = np.array([p.weight for p in scenario.providers], dtype=float)
        self.offset = np.zeros((K, M))
        self.coef = np.ones((K, M)) if coef is None else np.array(coef, dtype=float)
        self.curves = [[curve_for_demand(c.policy, p.demand) for c in scenario.caches]
                       for p in scenario.providers]
        self.linear = all(p.utility.kind == "linear" for p in scenario.providers)

    # V and V' on scores
    def value_k(self, k: int, s):
        return self.scenario.providers[k].utility.value(s)

    def deriv_k(self, k: int, s):
        return self.scenario.providers[k].utility.derivative(s)

    def hit_matrix(self, C: np.ndarray, P: np.ndarray) -> np.ndarray:
        """``h_km = p_km * H_km(C_km)``."""
        K, M = C.shape
        out = np.zeros((K, M))
        for k in range(K):
            for m in range(M):
                if P[k, m] > 0:
                    cap = min(C[k, m], self.curves[k][m].N)
                    out[k, m] = P[k, m] * self.curves[k][m].hit_rate(max(cap, 0.0))
        return out

    def scores(self, C: np.ndarray, P: np.ndarray, hits: Optional[np.ndarray] = None):
        if hits is None:
            hits = self.hit_matrix(C, P)
        return (P * self.offset).sum(axis=1) + (self.coef * hits).sum(axis=1)

    def cp_values(self, scores) -> np.ndarray:
        return np.array([self.weights[k] * self.value_k(k, s) for k, s in enumerate(scores)])

    def value(self, C: np.ndarray, P: np.ndarray) -> float:
        return float(self.cp_values(self.scores(C, P)).sum())

    def route_coefficients(self, C: np.ndarray) -> np.ndarray:
        """Score gained per unit of routing mass on each link, given slices ``C``."""
        K, M = C.shape
        out = np.full((K, M), -np.inf)
        for k in range(K):
            for m in self.scenario.connected[k]:
                H = self.curves[k][m].hit_rate(min(max(C[k, m], 0.0), self.curves[k][m].N))
                out[k, m] = self.offset[k, m] + self.coef[k, m] * H
        return out

    def solution(self, C: np.ndarray, P: np.ndarray, label=(), info=None) -> Solution:
        hits = self.hit_matrix(C, P)
        scores = self.scores(C, P, hits)
        obj = float(self.cp_values(scores).sum())
        lat = None
        if self.scenario.has_delays:
            from .latency import latency_from_hits
            lat = latency_from_hits(self.scenario, P, hits)
        return Solution(partition=C.copy(), routing=P.copy(), per_cp_hit_rate=hits.sum(axis=1),
                        objective=obj, per_cp_latency=lat, routing_label=tuple(label),
                        info=dict(info or {}))


# -- single cache KKT -----------------------------------------------------

@dataclass
class _Participant:
    k: int
    curve: HitCurve
    weight: float
    gain: float     # p_km * coef_km: score per unit of full-stream hit rate
    base: float     # score contributed by everything except this slice
    deriv: object   # V'_k


def _marginal(part: _Participant, T: float) -> tuple[float, float]:
    """``(C, d/dC of w V(base + gain*H(C)))`` at characteristic time ``T``."""
    C, H, dH = part.curve.state_at(T)
    return C, part.weight * float(part.deriv(part.base + part.gain * H)) * part.gain * dH


def _respond(part: _Participant, price: float) -> tuple[float, float]:
    """``(C, T)`` maximising ``w V(base + gain H(C)) - price*C`` over ``[0, N]``."""
    N = float(part.curve.N)
    if price <= 0:
        return N, math.inf
    full = part.weight * float(part.deriv(part.base + part.gain * part.curve.total_rate)) \
        * part.gain * part.curve.marginal_at_full
    if full >= price:
        return N, math.inf
    empty = part.weight * float(part.deriv(part.base)) * part.gain * part.curve.marginal_at_empty
    if empty <= price:
        return 0.0, 0.0
    u, _, Hs, dHs = part.curve.table()
    gs = part.weight * np.asarray(part.deriv(part.base + part.gain * Hs), dtype=float) \
        * part.gain * dHs - price
    below = np.flatnonzero(gs <= 0)
    if below.size == 0:
        return N, math.inf
    i = int(below[0])
    if i == 0:
        T = math.exp(u[0])
        return part.curve.capacity_at(T), T

    def g(v):
        return _marginal(part, math.exp(v))[1] - price

    a, b = float(u[i - 1]), float(u[i])
    if g(b) > 0:  # grid rounding at the bracket edge
        a, b = b, float(u[-1])
        if g(b) > 0:
            return N, math.inf
    if g(a) <= 0:
        T = math.exp(a)
    else:
        T = math.exp(brentq(g, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500))
    return part.curve.capacity_at(T), T


def _demand(part: _Participant, price: float) -> float:
    return _respond(part, price)[0]


def _empty_marginal(part: _Participant) -> float:
    return part.weight * float(part.deriv(part.base)) * part.gain * part.curve.marginal_at_empty


def _kkt(parts: Sequence[_Participant], capacity: float) -> tuple[np.ndarray, float]:
    """Allocate ``capacity`` among participants; returns (slices, dual price)."""
    if not parts:
        return np.zeros(0), 0.0
    caps = np.array([p.curve.N for p in parts], dtype=float)
    if caps.sum() <= capacity:
        return caps, 0.0
    if len(parts) == 1:
        return np.array([capacity]), _marginal(parts[0], parts[0].curve.solve_T(capacity))[1]

    def excess(mu):
        return sum(_demand(p, mu) for p in parts) - capacity

    hi = max(_empty_marginal(p) for p in parts)
    if not math.isfinite(hi):
        hi = 1.0
        while excess(hi) > 0:
            hi *= 2.0
    lo = 0.0
    mu = brentq(excess, lo, hi, xtol=1e-300, rtol=1e-14, maxiter=500)
    alloc = np.array([_demand(p, mu) for p in parts])
    total = alloc.sum()
    if total > capacity:
        alloc *= capacity / total
    return alloc, mu


def solve_single_cache(cache, participants, weights=None, utilities=None) -> np.ndarray:
    """Optimal split of one cache among providers routing all requests to it.

    Parameters
    ----------
    cache : CacheNode
    participants : sequence of ContentProvider
    weights, utilities : optional overrides of each provider's weight/utility

    Returns
    -------
    numpy.ndarray
        Slice per participant, in participant order.
    """
    parts = []
    for i, prov in enumerate(participants):
        w = prov.weight if weights is None else weights[i]
        u = prov.utility if utilities is None else utilities[i]
        parts.append(_Participant(i, curve_for_demand(cache.policy, prov.demand), float(w),
                                  1.0, 0.0, u.derivative))
    alloc, _ = _kkt(parts, cache.capacity)
    return alloc


def _cache_participants(obj: Objective, m: int, C: np.ndarray, P: np.ndarray):
    parts = []
    for k in range(obj.scenario.K):
        if P[k, m] <= 0:
            continue
        base = 0.0
        for m2 in range(obj.scenario.M):
            if P[k, m2] <= 0:
                continue
            base += P[k, m2] * obj.offset[k, m2]
            if m2 != m:
                cv = obj.curves[k][m2]
                base += P[k, m2] * obj.coef[k, m2] * cv.hit_rate(min(C[k, m2], cv.N))
        parts.append(_Participant(k, obj.curves[k][m], obj.weights[k],
                                  P[k, m] * obj.coef[k, m], base,
                                  lambda s, _k=k: obj.deriv_k(_k, s)))
    return parts


def solve_allocation(obj: Objective, P: np.ndarray, C0: Optional[np.ndarray] = None,
                     max_sweeps: int = 200, tol: float = 1e-12, memo: Optional[dict] = None):
    """Optimal partition for a fixed routing matrix ``P``.

    Returns ``(C, prices)`` where ``prices[m]`` is cache ``m``'s dual price.
    ``memo`` caches per-cache solutions by participant set and routing
    fractions; it is only consulted when the caches decouple.
    """
    sc = obj.scenario
    P = np.asarray(P, dtype=float)
    C = np.zeros((sc.K, sc.M)) if C0 is None else np.array(C0, dtype=float)
    C[P <= 0] = 0.0
    prices = np.zeros(sc.M)
    coupled = (not obj.linear) and bool(np.any((P > 0).sum(axis=1) > 1))
    if coupled:
        memo = None
    prev = -np.inf
    for _ in range(max_sweeps if coupled else 1):
        for m, cache in enumerate(sc.caches):
            key = (m, tuple((k, float(P[k, m])) for k in range(sc.K) if P[k, m] > 0))
            if memo is not None and key in memo:
                allocs, mu = memo[key]
            else:
                parts = _cache_participants(obj, m, C, P)
                alloc, mu = _kkt(parts, cache.capacity)
                allocs = {part.k: a for part, a in zip(parts, alloc)}
                if memo is not None:
                    memo[key] = (allocs, mu)
            C[:, m] = 0.0
            for k, a in allocs.items():
                C[k, m] = a
            prices[m] = mu
        if not coupled:
            break
        cur = obj.value(C, P)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            break
        prev = cur
    return C, prices


# -- structural routings ----------------------------------------------------

@dataclass(frozen=True)
class RoutingConfig:
    """Each provider sends its whole stream to cache ``assignment[k]``."""

    assignment: tuple

    def matrix(self, K: int, M: int) -> np.ndarray:
        P = np.zeros((K, M))
        P[np.arange(K), list(self.assignment)] = 1.0
        return P

    def label(self) -> tuple:
        return tuple(f"CP {k + 1} - Cache {m + 1}" for k, m in enumerate(self.assignment))

    def check(self, scenario: Scenario):
        if len(self.assignment) != scenario.K:
            raise ValueError("routing must assign every provider")
        for k, m in enumerate(self.assignment):
            if m not in scenario.connected[k]:
                raise ValueError(f"provider {k} is not connected to cache {m}")


def structural_routings(scenario: Scenario):
    """All single-cache routings in lexicographic order of ``(s(1), ..., s(K))``."""
    for combo in itertools.product(*scenario.connected):
        yield RoutingConfig(tuple(combo))


def _solve_cache_members(obj: Objective, m: int, members: tuple):
    P = np.zeros((obj.scenario.K, obj.scenario.M))
    for k in members:
        P[k, m] = 1.0
    parts = _cache_participants(obj, m, np.zeros_like(P), P)
    alloc, mu = _kkt(parts, obj.scenario.caches[m].capacity)
    return {part.k: a for part, a in zip(parts, alloc)}, mu


def evaluate_routing(scenario: Scenario, routing: RoutingConfig,
                     objective: Optional[Objective] = None, _memo=None) -> Solution:
    """Solve the per-cache allocation problems for a single-cache routing."""
    obj = objective or Objective(scenario)
    routing.check(scenario)
    K, M = scenario.K, scenario.M
    C = np.zeros((K, M))
    prices = np.zeros(M)
    for m in range(M):
        members = tuple(k for k in range(K) if routing.assignment[k] == m)
        if not members:
            continue
        key = (m, members)
        if _memo is not None and key in _memo:
            allocs, mu = _memo[key]
        else:
            allocs, mu = _solve_cache_members(obj, m, members)
            if _memo is not None:
                _memo[key] = (allocs, mu)
        for k, a in allocs.items():
            C[k, m] = a
        prices[m] = mu
    P = routing.matrix(K, M)
    return obj.solution(C, P, routing.label(), {"assignment": routing.assignment,
                                                "prices": prices.tolist()})


def enumerate_optimal(scenario: Scenario, objective: Optional[Objective] = None,
                      cap: int = DEFAULT_CAP, return_all: bool = False):
    """Best single-cache routing by exhaustive enumeration.

    Ties go to the lexicographically smallest assignment.  Raises
    :class:`InstanceTooLarge` when the number of routings exceeds ``cap``.
    """
    require_valid(scenario)
    L = scenario.routing_count()
    if L > cap:
        raise InstanceTooLarge(
            f"instance too large: {L} routings exceed the enumeration cap {cap}; use ACS")
    obj = objective or Objective(scenario)
    memo: dict = {}
    best = None
    every = []
    for r in structural_routings(scenario):
        sol = evaluate_routing(scenario, r, obj, memo)
        if return_all:
            every.append(sol)
        if best is None or sol.objective > best.objective:
            best = sol
    best.info["routings_evaluated"] = L
    return (best, every) if return_all else best


# -- alternate convex search -------------------------------------------------

def _route_block(obj: Objective, C: np.ndarray) -> np.ndarray:
    """Exact routing LP for fixed slices: fill the best links first."""
    sc = obj.scenario
    coef = obj.route_coefficients(C)
    P = np.zeros((sc.K, sc.M))
    for k, prov in enumerate(sc.providers):
        order = sorted(sc.connected[k], key=lambda m: (-coef[k, m], m))
        left = 1.0
        for m in order:
            cap = 1.0
            if sc.bandwidth is not None:
                cap = min(1.0, sc.bandwidth[k, m] / prov.aggregate_rate)
            take = min(cap, left)
            P[k, m] = take
            left -= take
            if left <= 1e-15:
                break
        P[k] /= P[k].sum()
    return P


def _park_idle(obj: Objective, C: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Hand the capacity of caches nobody routes to to their connected providers.

    Slices on links with ``p_km = 0`` do not enter the objective, so this is
    still an exact solution of the allocation block; it lets the routing
    block see what an idle cache would be worth.
    """
    sc = obj.scenario
    C = C.copy()
    for m, cache in enumerate(sc.caches):
        if np.any(P[:, m] > 0):
            continue
        ks = [k for k in range(sc.K) if sc.adjacency[k, m] > 0]
        parts = [_Participant(k, obj.curves[k][m], obj.weights[k], obj.coef[k, m],
                              float(P[k] @ obj.offset[k]),
                              lambda s, _k=k: obj.deriv_k(_k, s)) for k in ks]
        alloc, _ = _kkt(parts, cache.capacity)
        C[ks, m] = alloc
    return C


def solve_acs(scenario: Scenario, start: Solution, max_rounds: int = 100,
              tol: float = 1e-9, objective: Optional[Objective] = None) -> Solution:
    """Alternate Convex Search from ``start``.

    Each round solves the allocation block exactly for the current routing,
    then the routing block exactly for the new allocation.  Stops when a
    round improves the objective by less than ``tol`` (relative).
    """
    obj = objective or Objective(scenario)
    P = np.array(start.routing, dtype=float)
    C = np.array(start.partition, dtype=float)
    history = [obj.value(C, P)]
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        C, _ = solve_allocation(obj, P, C)
        C = _park_idle(obj, C, P)
        P_new = _route_block(obj, C)
        # keep the incumbent routing on ties so fixed points stay put
        if obj.value(C, P_new) > obj.value(C, P) + 1e-15 * max(1.0, abs(history[-1])):
            P = P_new
        cur = obj.value(C, P)
        history.append(cur)
        if cur - history[-2] < tol * max(1.0, abs(history[-2])):
            break
    C = np.where(P > 0, C, 0.0)
    label = tuple(f"CP {k + 1}: " + ", ".join(f"Cache {m + 1}={P[k, m]:.3g}"
                                              for m in np.flatnonzero(P[k] > 0))
                  for k in range(scenario.K))
    return obj.solution(C, P, label, {"rounds": rounds, "history": history})


def random_start(scenario: Scenario, rng: np.random.Generator,
                 objective: Optional[Objective] = None) -> Solution:
    """Random feasible point: Dirichlet routing rows, random split of each cache."""
    obj = objective or Objective(scenario)
    K, M = scenario.K, scenario.M
    P = np.zeros((K, M))
    for k, conn in enumerate(scenario.connected):
        P[k, list(conn)] = rng.dirichlet(np.ones(len(conn)))
    if scenario.bandwidth is not None:
        P = _clip_to_bandwidth(scenario, P)
    C = np.zeros((K, M))
    for m, cache in enumerate(scenario.caches):
        users = np.flatnonzero(P[:, m] > 0)
        if users.size:
            share = rng.dirichlet(np.ones(users.size)) * cache.capacity
            caps = np.array([scenario.providers[k].catalog_size for k in users])
            C[users, m] = np.minimum(share, caps)
    return obj.solution(C, P, ("random start",))


def _clip_to_bandwidth(scenario: Scenario, P: np.ndarray) -> np.ndarray:
    """Project each routing row onto its bandwidth box by water-filling the excess."""
    P = P.copy()
    for k, prov in enumerate(scenario.providers):
        cap = np.minimum(1.0, scenario.bandwidth[k] / prov.aggregate_rate) * scenario.adjacency[k]
        row = np.minimum(P[k], cap)
        left = 1.0 - row.sum()
        while left > 1e-15:
            room = cap - row
            open_ = room > 1e-15
            add = np.where(open_, np.minimum(room, left / open_.sum()), 0.0)
            row += add
            left = 1.0 - row.sum()
        P[k] = row / row.sum()
    return P


# -- oracle ------------------------------------------------------------------

def _simplex_grid(n: int, step: float):
    units = int(round(1.0 / step))
    if not math.isclose(units * step, 1.0, rel_tol=1e-9):
        raise ValueError("grid_step must divide 1")
    for combo in itertools.product(range(units + 1), repeat=n - 1):
        s = sum(combo)
        if s <= units:
            yield tuple(c / units for c in combo) + ((units - s) / units,)


def brute_force_probabilistic(scenario: Scenario, grid_step: float = 0.1,
                              objective: Optional[Objective] = None,
                              max_points: int = 200_000) -> Solution:
    """Best gridded probabilistic routing with the exact allocation for each.

    For tiny instances only; used as the no-splitting oracle.
    """
    obj = objective or Objective(scenario)
    rows = []
    for k, conn in enumerate(scenario.connected):
        rows.append([(conn, w) for w in _simplex_grid(len(conn), grid_step)])
    total = math.prod(len(r) for r in rows)
    if total > max_points:
        raise InstanceTooLarge(f"{total} grid points exceed the oracle limit {max_points}")
    best = None
    memo: dict = {}
    for choice in itertools.product(*rows):
        P = np.zeros((scenario.K, scenario.M))
        for k, (conn, w) in enumerate(choice):
            P[k, list(conn)] = w
        if scenario.bandwidth is not None:
            vol = P * np.array([p.aggregate_rate for p in scenario.providers])[:, None]
            if np.any(vol > scenario.bandwidth + 1e-9):
                continue
        C, _ = solve_allocation(obj, P, memo=memo)
        val = obj.value(C, P)
        if best is None or val > best[0]:
            best = (val, C, P)
    val, C, P = best
    return obj.solution(C, P, ("grid optimum",), {"grid_points": total})
