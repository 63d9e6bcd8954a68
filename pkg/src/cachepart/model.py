"""Domain types shared by the solvers and the simulator.

A :class:`Scenario` bundles caches, content providers, the provider/cache
adjacency matrix and the optional bandwidth and delay matrices.  Scenarios
round-trip through a plain JSON document (see ``scenario_from_dict``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np


class Policy(str, Enum):
    LRU = "LRU"
    FIFO = "FIFO"
    RANDOM = "RANDOM"

    @classmethod
    def parse(cls, value: "str | Policy") -> "Policy":
        if isinstance(value, Policy):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown cache policy {value!r}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DemandModel:
    catalog_size: int
    zipf_alpha: float
    aggregate_rate: float

    def __post_init__(self):
        if int(self.catalog_size) != self.catalog_size or self.catalog_size < 1:
            raise ValueError("catalog_size must be a positive integer")
        if not self.zipf_alpha >= 0:
            raise ValueError("zipf_alpha must be nonnegative")
        if not self.aggregate_rate > 0:
            raise ValueError("aggregate_rate must be positive")
        object.__setattr__(self, "catalog_size", int(self.catalog_size))

    @cached_property
    def rates(self) -> np.ndarray:
        return file_rates(self)


def file_rates(demand: DemandModel) -> np.ndarray:
    """Per-file Poisson request rates of a Zipf demand, most popular first."""
    ranks = np.arange(1, demand.catalog_size + 1, dtype=float)
    weights = ranks ** -float(demand.zipf_alpha)
    return _frozen(demand.aggregate_rate * weights / weights.sum())


UTILITY_KINDS = ("linear", "log", "beta_fair", "negated_latency")


@dataclass(frozen=True)
class UtilitySpec:
    """Concave utility of a provider.

    ``linear``, ``log`` and ``beta_fair`` are increasing functions of a hit
    rate.  ``negated_latency`` is ``U(t) = -t`` on a mean latency.
    """

    kind: str = "linear"
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "beta_fair":
            if self.beta is None or self.beta < 0 or self.beta == 1:
                raise ValueError("beta_fair needs beta >= 0, beta != 1")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            out = x
        elif self.kind == "negated_latency":
            out = -x
        elif self.kind == "log":
            with np.errstate(divide="ignore"):
                out = np.where(x > 0, np.log(np.maximum(x, 1e-300)), -np.inf)
        else:
            b = self.beta
            with np.errstate(divide="ignore"):
                out = np.maximum(x, 0.0) ** (1.0 - b) / (1.0 - b)
        return out[()] if out.ndim == 0 else out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            out = np.ones_like(x)
        elif self.kind == "negated_latency":
            out = -np.ones_like(x)
        elif self.kind == "log":
            with np.errstate(divide="ignore"):
                out = np.where(x > 0, 1.0 / np.maximum(x, 1e-300), np.inf)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                out = np.where(x > 0, np.maximum(x, 1e-300) ** -self.beta, np.inf)
        return out[()] if out.ndim == 0 else out

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.beta is not None:
            d["beta"] = self.beta
        return d


@dataclass(frozen=True)
class ContentProvider:
    demand: DemandModel
    weight: float = 1.0
    utility: UtilitySpec = field(default_factory=UtilitySpec)

    @property
    def rates(self) -> np.ndarray:
        return self.demand.rates

    @property
    def catalog_size(self) -> int:
        return self.demand.catalog_size

    @property
    def aggregate_rate(self) -> float:
        return self.demand.aggregate_rate


@dataclass(frozen=True)
class CacheNode:
    capacity: float
    policy: Policy = Policy.LRU

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy.parse(self.policy))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


@dataclass(frozen=True, eq=False)
class Scenario:
    providers: tuple
    caches: tuple
    adjacency: np.ndarray
    bandwidth: Optional[np.ndarray] = None
    hit_delay: Optional[np.ndarray] = None
    miss_delay: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "providers", tuple(self.providers))
        object.__setattr__(self, "caches", tuple(self.caches))
        for name in ("adjacency", "bandwidth", "hit_delay", "miss_delay"):
            v = getattr(self, name)
            if v is not None:
                arr = np.array(v, dtype=float)
                if arr.shape != (len(self.providers), len(self.caches)):
                    raise ValueError(
                        f"{name} must have shape (providers, caches) = "
                        f"{(len(self.providers), len(self.caches))}, got {arr.shape}")
                object.__setattr__(self, name, _frozen(arr))
        if (self.hit_delay is None) != (self.miss_delay is None):
            raise ValueError("hit and miss delays must be given together")

    @property
    def K(self) -> int:
        return len(self.providers)

    @property
    def M(self) -> int:
        return len(self.caches)

    @cached_property
    def connected(self) -> tuple:
        """Connected cache indices per provider, ascending."""
        return tuple(tuple(int(m) for m in np.flatnonzero(row > 0)) for row in self.adjacency)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.caches], dtype=float)

    @property
    def has_bandwidth(self) -> bool:
        return self.bandwidth is not None

    @property
    def has_delays(self) -> bool:
        return self.hit_delay is not None

    def routing_count(self) -> int:
        return math.prod(len(c) for c in self.connected)

    def replace(self, **changes) -> "Scenario":
        kw = dict(providers=self.providers, caches=self.caches, adjacency=self.adjacency,
                  bandwidth=self.bandwidth, hit_delay=self.hit_delay,
                  miss_delay=self.miss_delay)
        kw.update(changes)
        return Scenario(**kw)

    def with_capacity(self, m: int, capacity: float) -> "Scenario":
        caches = list(self.caches)
        caches[m] = CacheNode(capacity, caches[m].policy)
        return self.replace(caches=caches)


@dataclass
class Solution:
    """Cache partition and routing with the quantities derived from them.

    ``partition[k, m]`` is the slice (in files) of cache ``m`` given to
    provider ``k`` and ``routing[k, m]`` the fraction of provider ``k``'s
    requests sent to cache ``m``.
    """

    partition: np.ndarray
    routing: np.ndarray
    per_cp_hit_rate: np.ndarray
    objective: float
    per_cp_latency: Optional[np.ndarray] = None
    routing_label: tuple = ()
    info: dict = field(default_factory=dict)

    def check(self, scenario: Scenario, tol: float = 1e-6) -> list[str]:
        """Return the violated feasibility conditions (empty when feasible)."""
        problems = []
        used = self.partition.sum(axis=0)
        for m, cache in enumerate(scenario.caches):
            if used[m] > cache.capacity + tol:
                problems.append(f"cache {m} over capacity: {used[m]} > {cache.capacity}")
        if np.any(self.partition < -tol):
            problems.append("negative slice")
        for k, prov in enumerate(scenario.providers):
            if abs(self.routing[k].sum() - 1.0) > 1e-9:
                problems.append(f"routing row {k} sums to {self.routing[k].sum()}")
            if np.any(self.partition[k] > prov.catalog_size + tol):
                problems.append(f"provider {k} slice exceeds catalog")
        if np.any(self.routing > scenario.adjacency + 1e-12) or np.any(self.routing < 0):
            problems.append("routing outside adjacency")
        if scenario.bandwidth is not None:
            rates = np.array([p.aggregate_rate for p in scenario.providers])
            volume = self.routing * rates[:, None]
            if np.any(volume > scenario.bandwidth + 1e-9):
                problems.append("bandwidth limit exceeded")
        return problems

    def to_dict(self) -> dict:
        d = {
            "objective": float(self.objective),
            "partition": self.partition.tolist(),
            "routing": self.routing.tolist(),
            "per_cp_hit_rate": self.per_cp_hit_rate.tolist(),
            "routing_label": list(self.routing_label),
        }
        if self.per_cp_latency is not None:
            d["per_cp_latency"] = self.per_cp_latency.tolist()
        return d

    def rows(self, hit_rates_km: Optional[np.ndarray] = None):
        """Tidy ``(k, m, C_km, p_km, h_km)`` rows for CSV output."""
        K, M = self.partition.shape
        for k in range(K):
            for m in range(M):
                h = float(hit_rates_km[k, m]) if hit_rates_km is not None else float("nan")
                yield k, m, float(self.partition[k, m]), float(self.routing[k, m]), h


def validate(scenario: Scenario) -> list[Violation]:
    """Every invariant the scenario breaks; an empty list means valid."""
    out: list[Violation] = []
    A = scenario.adjacency
    if not np.all((A == 0) | (A == 1)):
        out.append(Violation("adjacency_not_binary", "adjacency entries must be 0 or 1"))
    for k, prov in enumerate(scenario.providers):
        if not prov.weight > 0:
            out.append(Violation("nonpositive_weight", f"provider {k} weight {prov.weight}"))
        if A[k].sum() < 1:
            out.append(Violation("provider_disconnected",
                                 f"provider {k} connects to no cache"))
        if prov.utility.kind == "negated_latency" and not scenario.has_delays:
            out.append(Violation("latency_utility_without_delays",
                                 f"provider {k} uses negated_latency but no delays given"))
    for m, cache in enumerate(scenario.caches):
        if not cache.capacity > 0:
            out.append(Violation("nonpositive_capacity", f"cache {m} capacity {cache.capacity}"))
    if scenario.bandwidth is not None:
        V = scenario.bandwidth
        if np.any(V < 0):
            out.append(Violation("negative_bandwidth", "bandwidth limits must be >= 0"))
        if np.any((V > 0) & (A == 0)):
            out.append(Violation("bandwidth_on_missing_link",
                                 "bandwidth given where provider and cache are not connected"))
        for k, prov in enumerate(scenario.providers):
            if (V[k] * A[k]).sum() < prov.aggregate_rate:
                out.append(Violation("bandwidth_insufficient",
                                     f"provider {k}: total bandwidth {(V[k] * A[k]).sum()} "
                                     f"< aggregate rate {prov.aggregate_rate}"))
    if scenario.has_delays:
        d, d0 = scenario.hit_delay, scenario.miss_delay
        for k, m in zip(*np.nonzero(A)):
            if not (0 <= d[k, m] < d0[k, m]):
                out.append(Violation("bad_delay",
                                     f"pair ({k},{m}) needs 0 <= hit delay < miss delay, "
                                     f"got {d[k, m]}, {d0[k, m]}"))
    return out


class ScenarioError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def require_valid(scenario: Scenario) -> Scenario:
    problems = validate(scenario)
    if problems:
        raise ScenarioError(problems)
    return scenario


# -- JSON ------------------------------------------------------------------

def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from its JSON document form.

    Raises ``KeyError``/``ValueError``/``TypeError`` on malformed input; does
    not run :func:`validate`.
    """
    caches = [CacheNode(float(c["capacity"]), Policy.parse(c.get("policy", "LRU")))
              for c in doc["caches"]]
    providers = []
    for p in doc["providers"]:
        u = p.get("utility", {"kind": "linear"})
        if isinstance(u, str):
            u = {"kind": u}
        providers.append(ContentProvider(
            DemandModel(p["catalog_size"], float(p["zipf_alpha"]), float(p["aggregate_rate"])),
            float(p.get("weight", 1.0)),
            UtilitySpec(u["kind"], u.get("beta")),
        ))
    delays = doc.get("delays")
    return Scenario(
        providers=providers,
        caches=caches,
        adjacency=doc["adjacency"],
        bandwidth=doc.get("bandwidth"),
        hit_delay=None if delays is None else delays["hit"],
        miss_delay=None if delays is None else delays["miss"],
    )


def scenario_to_dict(s: Scenario) -> dict:
    doc: dict[str, Any] = {
        "caches": [{"capacity": c.capacity, "policy": c.policy.value} for c in s.caches],
        "providers": [{
            "catalog_size": p.catalog_size,
            "zipf_alpha": p.demand.zipf_alpha,
            "aggregate_rate": p.aggregate_rate,
            "weight": p.weight,
            "utility": p.utility.to_dict(),
        } for p in s.providers],
        "adjacency": s.adjacency.astype(int).tolist(),
    }
    if s.bandwidth is not None:
        doc["bandwidth"] = s.bandwidth.tolist()
    if s.has_delays:
        doc["delays"] = {"hit": s.hit_delay.tolist(), "miss": s.miss_delay.tolist()}
    return doc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def fixture_path(name: str) -> Path:
    """Path of a scenario file shipped with the package (e.g. ``paper_base.json``)."""
    return Path(__file__).parent / "data" / name


def load_fixture(name: str) -> Scenario:
    return load_scenario(fixture_path(name))
