"""Experiment plumbing behind the command line: baselines, sweeps, CSV output."""
from __future__ import annotations

import copy
import csv
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .alloc import Objective, enumerate_optimal, random_start, solve_acs, solve_allocation
from .bandwidth import solve_bandwidth
from .latency import LatencyObjective, solve_latency
from .model import Scenario, Solution, require_valid, scenario_from_dict

log = logging.getLogger(__name__)

WORKERS_ENV = "CACHEPART_WORKERS"

__all__ = [
    "static_routing_baseline",
    "SweepSpec",
    "parse_range",
    "set_path",
    "get_path",
    "solve_with",
    "run_sweep",
    "emit_plotdata",
    "random_family",
    "SOLVERS",
]


def static_routing_baseline(scenario: Scenario, objective: Optional[Objective] = None) -> Solution:
    """Equal-probability routing over connected caches with optimal partitioning.

    Under bandwidth limits an equal split that overloads a link is replaced
    by a split proportional to the link limits (logged as a warning).
    """
    obj = objective or Objective(scenario)
    A = scenario.adjacency
    P = A / A.sum(axis=1, keepdims=True)
    if scenario.bandwidth is not None:
        R = np.array([p.aggregate_rate for p in scenario.providers])
        for k in range(scenario.K):
            if np.any(P[k] * R[k] > scenario.bandwidth[k] + 1e-9):
                log.warning("equal split of provider %d exceeds a bandwidth limit; "
                            "splitting in proportion to the limits instead", k)
                V = scenario.bandwidth[k] * A[k]
                P[k] = V / V.sum()
    C, prices = solve_allocation(obj, P)
    return obj.solution(C, P, tuple(f"CP {k + 1}: equal split" for k in range(scenario.K)),
                        {"prices": prices.tolist()})


# -- parameter paths -------------------------------------------------------------

_TOKEN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


def _tokens(path: str) -> list:
    out, pos = [], 0
    for part in path.split("."):
        if not part:
            raise ValueError(f"empty segment in parameter path {path!r}")
        pos = 0
        for m in _TOKEN.finditer(part):
            if m.start() != pos:
                raise ValueError(f"cannot parse parameter path {path!r}")
            out.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
            pos = m.end()
        if pos != len(part):
            raise ValueError(f"cannot parse parameter path {path!r}")
    return out


def get_path(doc: dict, path: str) -> Any:
    node = doc
    for t in _tokens(path):
        node = node[t]
    return node


def set_path(doc: dict, path: str, value) -> dict:
    """Copy of ``doc`` with ``path`` (e.g. ``caches[1].capacity``) set to ``value``."""
    doc = copy.deepcopy(doc)
    toks = _tokens(path)
    try:
        node = doc
        for t in toks[:-1]:
            node = node[t]
        node[toks[-1]]
    except (KeyError, IndexError, TypeError) as exc:
        raise ValueError(f"parameter path {path!r} does not resolve") from exc
    node[toks[-1]] = value
    return doc


def parse_range(text: str) -> list:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("sweep step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + i * step for i in range(n)]
    else:
        vals = [float(x) for x in text.split(",") if x.strip()]
    return [int(v) if float(v).is_integer() else v for v in vals]


@dataclass(frozen=True)
class SweepSpec:
    path: str
    values: tuple
    solver: str = "solve"

    @classmethod
    def parse(cls, text: str, solver: str = "solve") -> "SweepSpec":
        path, _, rng = text.partition("=")
        if not rng:
            raise ValueError("sweep must look like path=start:stop:step")
        return cls(path.strip(), tuple(parse_range(rng)), solver)

    def check(self, doc: dict):
        get_path(doc, self.path)


# -- solvers ----------------------------------------------------------------------

def _acs(scenario: Scenario, cap: int) -> Solution:
    obj = Objective(scenario)
    best = None
    starts = [static_routing_baseline(scenario, obj)]
    rng = np.random.default_rng(0)
    starts += [random_start(scenario, rng, obj) for _ in range(4)]
    for st in starts:
        sol = solve_acs(scenario, st, objective=obj)
        if best is None or sol.objective > best.objective:
            best = sol
    return best


SOLVERS = {
    "solve": lambda sc, cap: enumerate_optimal(sc, cap=cap),
    "bandwidth": lambda sc, cap: solve_bandwidth(sc, cap=cap),
    "latency": lambda sc, cap: solve_latency(sc, cap=cap),
    "acs": _acs,
}


def solve_with(solver: str, scenario: Scenario, cap: int) -> tuple[Solution, Solution]:
    """Joint solution and the matching static baseline."""
    require_valid(scenario)
    sol = SOLVERS[solver](scenario, cap)
    obj = LatencyObjective(scenario) if solver == "latency" else Objective(scenario)
    return sol, static_routing_baseline(scenario, obj)


def _point(args):
    doc, path, value, solver, cap = args
    sc = scenario_from_dict(set_path(doc, path, value) if path else doc)
    sol, base = solve_with(solver, sc, cap)
    return value, sol, base


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(doc: dict, spec: SweepSpec, cap: int, n_workers: Optional[int] = None):
    """Solve every sweep point; results come back in sweep order."""
    spec.check(doc)
    jobs = [(doc, spec.path, v, spec.solver, cap) for v in spec.values]
    n = workers() if n_workers is None else n_workers
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            return list(pool.map(_point, jobs))
    return [_point(j) for j in jobs]


# -- output --------------------------------------------------------------------------

def _write(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def emit_plotdata(results, outdir, param: str = "C2") -> dict:
    """Write one tidy CSV per figure kind; returns ``{name: path}``.

    ``results`` is a list of ``(value, joint_solution, static_solution)``.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["utility"] = _write(out / "utility.csv", [param, "utility_joint", "utility_static"],
                              ((v, s.objective, b.objective) for v, s, b in results))
    files["routing"] = _write(out / "routing.csv", [param, "cp", "cache", "p"],
                              ((v, k + 1, m + 1, s.routing[k, m]) for v, s, _ in results
                               for k in range(s.routing.shape[0])
                               for m in range(s.routing.shape[1])))
    files["partition"] = _write(out / "partition.csv", [param, "cp", "cache", "C"],
                                ((v, k + 1, m + 1, s.partition[k, m]) for v, s, _ in results
                                 for k in range(s.partition.shape[0])
                                 for m in range(s.partition.shape[1])))
    files["hit_rates"] = _write(out / "hit_rates.csv", [param, "cp", "h"],
                                [(v, k + 1, s.per_cp_hit_rate[k]) for v, s, _ in results
                                 for k in range(s.per_cp_hit_rate.size)]
                                + [(v, "total", s.per_cp_hit_rate.sum()) for v, s, _ in results])
    if any(s.per_cp_latency is not None for _, s, _ in results):
        files["latency"] = _write(out / "latency.csv", [param, "cp", "t"],
                                  ((v, k + 1, s.per_cp_latency[k]) for v, s, _ in results
                                   if s.per_cp_latency is not None
                                   for k in range(s.per_cp_latency.size)))
    files["labels"] = _write(out / "labels.csv", [param, "routing_label"],
                             ((v, " | ".join(s.routing_label)) for v, s, _ in results))
    return files


def emit_traces(runs, outdir) -> dict:
    """Price/demand/hit-rate series of decentralized runs, one row per round."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["prices"] = _write(out / "prices.csv", ["routing", "round", "cache", "price"],
                             ((" | ".join(tr.label), t, m + 1, p[m]) for _, tr in runs
                              for t, p in enumerate(tr.prices) for m in range(p.size)))
    files["demands"] = _write(out / "demands.csv", ["routing", "round", "cp", "cache", "C"],
                              ((" | ".join(tr.label), t, k + 1, m + 1, d[k, m]) for _, tr in runs
                               for t, d in enumerate(tr.demands)
                               for k in range(d.shape[0]) for m in range(d.shape[1])
                               if d[k, m] > 0 or t == 0))
    files["trace_hit_rates"] = _write(out / "trace_hit_rates.csv", ["routing", "round", "cp", "h"],
                                      ((" | ".join(tr.label), t, k + 1, h[k]) for _, tr in runs
                                       for t, h in enumerate(tr.hit_rates)
                                       for k in range(h.size)))
    files["runs"] = _write(out / "runs.csv",
                           ["routing", "objective", "converged", "rounds", "overshoot"],
                           ((" | ".join(tr.label), s.objective, tr.converged, tr.rounds,
                             tr.overshoot) for s, tr in runs))
    return files


# -- random instance family ------------------------------------------------------------

def random_family(spec: dict) -> list[dict]:
    """Scenario documents drawn uniformly from the ranges in ``spec``.

    Keys: ``seed``, ``instances``, ``caches``, ``providers``, ``connections``
    ``[lo, hi]`` (capped at the cache count), ``catalog_size``, ``zipf_alpha``,
    ``aggregate_rate``, ``capacity`` (each ``[lo, hi]``), ``policy``.
    """
    rng = np.random.default_rng(spec.get("seed", 0))
    M, K = int(spec["caches"]), int(spec["providers"])
    lo_c, hi_c = spec.get("connections", [2, 5])
    docs = []
    for _ in range(int(spec.get("instances", 20))):
        caps = rng.uniform(*spec["capacity"], size=M)
        A = np.zeros((K, M), dtype=int)
        provs = []
        for k in range(K):
            b = int(rng.integers(lo_c, min(hi_c, M) + 1))
            A[k, rng.choice(M, size=b, replace=False)] = 1
            provs.append({
                "catalog_size": int(rng.integers(spec["catalog_size"][0],
                                                 spec["catalog_size"][1] + 1)),
                "zipf_alpha": float(rng.uniform(*spec["zipf_alpha"])),
                "aggregate_rate": float(rng.uniform(*spec["aggregate_rate"])),
                "weight": 1.0,
                "utility": {"kind": "linear"},
            })
        docs.append({
            "caches": [{"capacity": float(c), "policy": spec.get("policy", "LRU")} for c in caps],
            "providers": provs,
            "adjacency": A.tolist(),
        })
    return docs
