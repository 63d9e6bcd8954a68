"""Seeded request-level simulator for LRU, FIFO and RANDOM caches.

Requests follow the independent reference model: file indices are drawn
i.i.d. from the normalised rate vector.  Under these three policies the
cache contents depend only on the order of requests, so inter-arrival times
are never materialised; an empirical hit *rate* is the hit ratio times the
aggregate arrival rate.

Seeds: a run seeded with ``seed`` uses ``np.random.SeedSequence(seed)``;
its first spawned child drives the request stream and the second drives
RANDOM victim selection.  ``simulate_solution`` spawns one child sequence
per provider (routing + stream) and one per slice (victims) in that order.
"""
from __future__ import annotations

import random
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .che import curve_for
from .model import DemandModel, Policy, Scenario, Solution, file_rates

__all__ = [
    "AliasTable",
    "SimConfig",
    "SimResult",
    "simulate_slice",
    "simulate_stream",
    "simulate_solution",
    "SolutionSimResult",
]


class AliasTable:
    """Walker/Vose alias table for O(1) categorical draws."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be a nonnegative, nonzero vector")
        n = w.size
        scaled = w * (n / w.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias
        self.n = n

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        col = rng.integers(0, self.n, size=size)
        keep = rng.random(size) < self.prob[col]
        return np.where(keep, col, self.alias[col])


@dataclass(frozen=True)
class SimConfig:
    policy: Policy
    slice_size: int
    rates: Optional[np.ndarray] = None
    demand: Optional[DemandModel] = None
    horizon: int = 1_000_000
    warmup: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy.parse(self.policy))
        if (self.rates is None) == (self.demand is None):
            raise ValueError("give exactly one of rates or demand")
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon // 10)
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.slice_size < 0 or self.slice_size > self.file_rates().size:
            raise ValueError("slice size must lie in [0, N]")

    def file_rates(self) -> np.ndarray:
        return np.asarray(self.rates, float) if self.rates is not None else file_rates(self.demand)


@dataclass
class SimResult:
    hit_rate: float
    hit_ratio: float
    per_file_hits: np.ndarray
    half_width: float
    requests: int
    model_rate: Optional[float] = None

    @property
    def rel_err(self) -> float:
        if not self.model_rate:
            return float("nan")
        return abs(self.hit_rate - self.model_rate) / self.model_rate


# -- eviction loops ------------------------------------------------------------
# Each returns a bytearray of hit flags, one per request.

def _lru(stream: Sequence[int], size: int, rnd) -> bytearray:
    hits = bytearray(len(stream))
    if size <= 0:
        return hits
    od: OrderedDict = OrderedDict()
    move, pop = od.move_to_end, od.popitem
    for t, f in enumerate(stream):
        if f in od:
            move(f)
            hits[t] = 1
        else:
            od[f] = None
            if len(od) > size:
                pop(last=False)
    return hits


def _fifo(stream: Sequence[int], size: int, rnd) -> bytearray:
    hits = bytearray(len(stream))
    if size <= 0:
        return hits
    present: set = set()
    queue: deque = deque()
    for t, f in enumerate(stream):
        if f in present:
            hits[t] = 1
        else:
            present.add(f)
            queue.append(f)
            if len(queue) > size:
                present.discard(queue.popleft())
    return hits


def _random(stream: Sequence[int], size: int, rnd) -> bytearray:
    hits = bytearray(len(stream))
    if size <= 0:
        return hits
    slots: list = []
    where: dict = {}
    pick = rnd.randrange
    for t, f in enumerate(stream):
        if f in where:
            hits[t] = 1
        elif len(slots) < size:
            where[f] = len(slots)
            slots.append(f)
        else:
            i = pick(size)
            del where[slots[i]]
            slots[i] = f
            where[f] = i
    return hits


_LOOPS = {Policy.LRU: _lru, Policy.FIFO: _fifo, Policy.RANDOM: _random}


def simulate_stream(policy, stream: np.ndarray, size: int, warmup: int, n_files: int,
                    victim_seed, batches: int = 20):
    """Replay ``stream`` through a cache; returns ``(hit_ratio, per_file_hits, half_width)``.

    Only requests after the first ``warmup`` are counted.  The half width is
    the 95% batch-means confidence interval of the hit ratio.
    """
    policy = Policy.parse(policy)
    rnd = random.Random(int(victim_seed))
    flags = np.frombuffer(_LOOPS[policy](stream.tolist(), int(size), rnd), dtype=np.uint8)
    counted = flags[warmup:]
    files = stream[warmup:]
    per_file = np.bincount(files[counted.astype(bool)], minlength=n_files)
    n = counted.size
    if n == 0:
        return 0.0, per_file, float("nan")
    ratio = float(counted.mean())
    b = min(batches, n)
    if b >= 2:
        means = np.array([c.mean() for c in np.array_split(counted, b)])
        half = float(stats.t.ppf(0.975, b - 1) * means.std(ddof=1) / np.sqrt(b))
    else:
        half = float("nan")
    return ratio, per_file, half


def simulate_slice(config: SimConfig, with_model: bool = True) -> SimResult:
    """Simulate one cache slice fed by the whole request stream."""
    rates = config.file_rates()
    R = float(rates.sum())
    ss = np.random.SeedSequence(config.seed)
    stream_seq, victim_seq = ss.spawn(2)
    rng = np.random.default_rng(stream_seq)
    stream = AliasTable(rates).draw(rng, config.horizon)
    ratio, per_file, half = simulate_stream(config.policy, stream, config.slice_size,
                                            config.warmup, rates.size,
                                            victim_seq.generate_state(1)[0])
    model = None
    if with_model:
        model = curve_for(config.policy, rates).hit_rate(min(config.slice_size, rates.size))
    return SimResult(hit_rate=ratio * R, hit_ratio=ratio, per_file_hits=per_file,
                     half_width=half * R, requests=config.horizon - config.warmup,
                     model_rate=model)


@dataclass
class SolutionSimResult:
    hit_rates: np.ndarray                 # (K,) empirical h_k
    slice_hit_rates: np.ndarray           # (K, M) empirical h_km
    arrival_rates: np.ndarray             # (K, M) empirical p_km * R_k
    latencies: Optional[np.ndarray] = None
    objective: float = float("nan")
    slices: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))


def simulate_solution(scenario: Scenario, solution: Solution, horizon: int = 1_000_000,
                      seed: int = 0, warmup_fraction: float = 0.1) -> SolutionSimResult:
    """Replay a partition/routing end to end.

    Each provider's stream is thinned across caches by its routing row
    (independent per request, which keeps every substream Poisson), and
    every slice, rounded to whole files, is simulated on its own.
    """
    K, M = scenario.K, scenario.M
    slices = np.clip(np.rint(solution.partition), 0, None).astype(int)
    h = np.zeros((K, M))
    arrivals = np.zeros((K, M))
    ss = np.random.SeedSequence(seed)
    cp_seqs = ss.spawn(K)
    victim_seqs = ss.spawn(K * M)
    for k, prov in enumerate(scenario.providers):
        rates = prov.rates
        R = prov.aggregate_rate
        rng = np.random.default_rng(cp_seqs[k])
        stream = AliasTable(rates).draw(rng, horizon)
        p = np.asarray(solution.routing[k], dtype=float)
        if np.count_nonzero(p) == 1:
            target = np.full(horizon, int(np.flatnonzero(p)[0]))
        else:
            target = rng.choice(M, size=horizon, p=p / p.sum())
        for m in range(M):
            sub = stream[target == m]
            arrivals[k, m] = R * sub.size / horizon
            if sub.size == 0:
                continue
            warm = int(sub.size * warmup_fraction)
            size = min(int(slices[k, m]), rates.size)
            ratio, _, _ = simulate_stream(scenario.caches[m].policy, sub, size, warm,
                                          rates.size,
                                          victim_seqs[k * M + m].generate_state(1)[0])
            h[k, m] = arrivals[k, m] * ratio
    hk = h.sum(axis=1)
    lat = None
    if scenario.has_delays:
        d, d0 = scenario.hit_delay, scenario.miss_delay
        R = np.array([p.aggregate_rate for p in scenario.providers])
        num = np.where(arrivals > 0, d * h + d0 * (arrivals - h), 0.0)
        lat = num.sum(axis=1) / R
    obj = float("nan")
    if all(p.utility.kind != "negated_latency" for p in scenario.providers):
        obj = float(sum(p.weight * p.utility.value(hk[k])
                        for k, p in enumerate(scenario.providers)))
    return SolutionSimResult(hit_rates=hk, slice_hit_rates=h, arrival_rates=arrivals,
                             latencies=lat, objective=obj, slices=slices)
