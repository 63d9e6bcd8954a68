"""Command line entry point: ``cachepart <subcommand> ...``.

Every run writes its CSV files and a ``manifest.json`` into
``<out>/<UTC timestamp>-<config hash>/``.  Exit codes: 0 success, 1 solver
failure, 2 invalid or malformed input, 3 instance too large for enumeration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .alloc import DEFAULT_CAP, InstanceTooLarge, Objective
from .bandwidth import enumerate_bandwidth_routings
from .decentral import run_parallel_exploration, run_routing_bandwidth
from .experiments import (SweepSpec, emit_plotdata, emit_traces, random_family, run_sweep,
                          set_path, solve_with, static_routing_baseline)
from .latency import LatencyObjective
from .model import Policy, ScenarioError, DemandModel, scenario_from_dict, validate
from .sim import SimConfig, simulate_slice, simulate_solution

log = logging.getLogger("cachepart")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_TOO_LARGE = 0, 1, 2, 3


class InputError(Exception):
    pass


def _load_doc(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from exc


def _apply_sets(doc: dict, sets) -> dict:
    for item in sets or ():
        path, _, raw = item.partition("=")
        if not raw:
            raise InputError(f"--set needs path=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        try:
            doc = set_path(doc, path.strip(), value)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise InputError(str(exc)) from exc
    return doc


def _scenario(doc: dict):
    try:
        sc = scenario_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed scenario: {exc!r}") from exc
    problems = validate(sc)
    if problems:
        raise ScenarioError(problems)
    return sc


def _run_dir(args, payload: dict) -> Path:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    digest = hashlib.sha256(blob).hexdigest()[:12]
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    d = Path(args.out) / f"{stamp}-{digest}"
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": digest,
        "config": payload,
        "versions": {"cachepart": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return d


def _payload(args, doc=None) -> dict:
    p = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    if doc is not None:
        p["scenario_doc"] = doc
    return p


def _write_solution(d: Path, sol, obj, name="solution"):
    (d / f"{name}.json").write_text(json.dumps(sol.to_dict(), indent=2))
    hits = obj.hit_matrix(sol.partition, sol.routing)
    with open(d / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cp", "cache", "C", "p", "h"])
        for k, m, C, p, h in sol.rows(hits):
            w.writerow([k + 1, m + 1, repr(C), repr(p), repr(h)])


def _summary(sol) -> str:
    lines = [f"objective {sol.objective:.6g}"]
    lines += [f"  {lab}" for lab in sol.routing_label]
    lines += [f"  CP {k + 1}: h={h:.6g}" for k, h in enumerate(sol.per_cp_hit_rate)]
    return "\n".join(lines)


# -- subcommands --------------------------------------------------------------------

def _solver_command(args, solver: str) -> int:
    doc = _apply_sets(_load_doc(args.scenario), args.set)
    if "family" in doc:
        return _family(args, doc, solver)
    sweep_text = args.sweep
    if sweep_text is None and getattr(args, "fixture_sweep", False) and "sweep" in doc:
        sweep_text = f"{doc['sweep']['path']}={doc['sweep']['range']}"
    sc = _scenario(doc)
    if sweep_text:
        try:
            spec = SweepSpec.parse(sweep_text, solver)
            spec.check(doc)
        except (ValueError, KeyError, IndexError) as exc:
            raise InputError(f"bad sweep: {exc}") from exc
        results = run_sweep(doc, spec, args.cap)
        d = _run_dir(args, _payload(args, doc))
        files = emit_plotdata(results, d, param=spec.path)
        print(f"{len(results)} sweep points -> {d}")
        for name, path in files.items():
            print(f"  {name}: {path.name}")
        return EXIT_OK
    sol, base = solve_with(solver, sc, args.cap)
    d = _run_dir(args, _payload(args, doc))
    obj = LatencyObjective(sc) if solver == "latency" else Objective(sc)
    _write_solution(d, sol, obj)
    _write_solution(d, base, obj, "static")
    print(_summary(sol))
    print(f"static baseline objective {base.objective:.6g}")
    print(f"artifacts -> {d}")
    return EXIT_OK


def _family(args, doc, solver) -> int:
    docs = random_family(doc["family"])
    d = _run_dir(args, _payload(args, doc))
    rows = []
    for i, sdoc in enumerate(docs):
        sc = _scenario(sdoc)
        sol, base = solve_with(solver, sc, args.cap)
        rows.append((i, base.objective, sol.objective, sol.objective / base.objective - 1.0))
    with open(d / "family.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "utility_static", "utility_joint", "improvement"])
        w.writerows([(i, repr(a), repr(b), repr(c)) for i, a, b, c in rows])
    mean_s = np.mean([r[1] for r in rows])
    mean_j = np.mean([r[2] for r in rows])
    print(f"{len(rows)} instances: static {mean_s:.4g}, joint {mean_j:.4g}, "
          f"mean improvement {100 * np.mean([r[3] for r in rows]):.1f}%")
    print(f"artifacts -> {d}")
    return EXIT_OK


def cmd_solve(args):
    return _solver_command(args, "acs" if args.acs else "solve")


def cmd_bandwidth(args):
    return _solver_command(args, "bandwidth")


def cmd_latency(args):
    return _solver_command(args, "latency")


def cmd_sweep(args):
    if not args.sweep:
        args.fixture_sweep = True
    return _solver_command(args, args.solver)


def cmd_decentralized(args):
    doc = _apply_sets(_load_doc(args.scenario), args.set)
    sc = _scenario(doc)
    obj = LatencyObjective(sc) if args.latency else Objective(sc)
    kw = dict(gamma=args.gamma, max_rounds=args.max_rounds, stop_tol=args.stop_tol,
              schedule=args.schedule)
    if sc.has_bandwidth:
        runs = []
        for combo in enumerate_bandwidth_routings(sc):
            runs.append(run_routing_bandwidth(sc, combo, objective=obj, **kw))
        best = max(runs, key=lambda r: r[0].objective)[0]
    else:
        if sc.routing_count() > args.cap:
            raise InstanceTooLarge(f"{sc.routing_count()} routings exceed cap {args.cap}")
        best, runs = run_parallel_exploration(sc, objective=obj, cap=args.cap, **kw)
    d = _run_dir(args, _payload(args, doc))
    emit_traces(runs, d)
    _write_solution(d, best, obj)
    for sol, tr in runs:
        state = "converged" if tr.converged else "NOT converged"
        print(f"{' | '.join(tr.label)}: objective {sol.objective:.6g}, {state} "
              f"after {tr.rounds} rounds")
    print("winner:")
    print(_summary(best))
    print(f"artifacts -> {d}")
    return EXIT_OK if all(tr.converged for _, tr in runs) else EXIT_FAIL


def cmd_simulate(args):
    doc = _apply_sets(_load_doc(args.scenario), args.set)
    sc = _scenario(doc)
    if args.solver == "static":
        sol = static_routing_baseline(sc)
    else:
        sol, _ = solve_with(args.solver, sc, args.cap)
    res = simulate_solution(sc, sol, horizon=args.horizon, seed=args.seed)
    d = _run_dir(args, _payload(args, doc))
    obj = Objective(sc) if args.solver != "latency" else LatencyObjective(sc)
    model = obj.hit_matrix(sol.partition, sol.routing)
    with open(d / "simulation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cp", "cache", "slice", "p", "arrival_rate", "empirical_h", "model_h"])
        for k in range(sc.K):
            for m in range(sc.M):
                w.writerow([k + 1, m + 1, int(res.slices[k, m]), repr(float(sol.routing[k, m])),
                            repr(float(res.arrival_rates[k, m])),
                            repr(float(res.slice_hit_rates[k, m])), repr(float(model[k, m]))])
    for k in range(sc.K):
        extra = "" if res.latencies is None else f", t={res.latencies[k]:.6g}"
        print(f"CP {k + 1}: empirical h={res.hit_rates[k]:.6g} "
              f"(model {sol.per_cp_hit_rate[k]:.6g}){extra}")
    print(f"artifacts -> {d}")
    return EXIT_OK


def cmd_validate(args):
    if args.scenario:
        doc = _apply_sets(_load_doc(args.scenario), args.set)
        try:
            sc = scenario_from_dict(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed scenario: {exc!r}") from exc
        problems = validate(sc)
        if problems:
            raise ScenarioError(problems)
        print("scenario valid")
        return EXIT_OK
    try:
        policy = Policy.parse(args.policy)
        slices = [int(s) for s in args.slices.split(",")]
        demand = DemandModel(args.n, args.alpha, args.rate)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    d = _run_dir(args, _payload(args))
    with open(d / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "N", "alpha", "R", "slice", "horizon", "seed",
                    "empirical_rate", "model_rate", "rel_err"])
        for i, s in enumerate(slices):
            seed = args.seed + i
            r = simulate_slice(SimConfig(policy, s, demand=demand, horizon=args.horizon,
                                         seed=seed))
            w.writerow([policy.value, args.n, args.alpha, args.rate, s, args.horizon, seed,
                        repr(r.hit_rate), repr(r.model_rate), repr(r.rel_err)])
            print(f"{policy.value} slice={s}: sim {r.hit_rate:.6g} ± {r.half_width:.2g}, "
                  f"model {r.model_rate:.6g}, rel err {100 * r.rel_err:.2f}%")
    print(f"artifacts -> {d}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cachepart",
                                 description="Joint cache partitioning and request routing.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario JSON file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a scenario value, e.g. caches[1].capacity=1900")
        p.add_argument("--out", default="runs", help="parent directory for run outputs")
        p.add_argument("--cap", type=int, default=DEFAULT_CAP,
                       help="maximum number of routings to enumerate")

    def sweepable(p):
        p.add_argument("--sweep", metavar="PATH=START:STOP:STEP",
                       help="sweep one parameter (inclusive stop) and emit plot data")

    p = sub.add_parser("solve", help="optimal partition and routing")
    common(p)
    sweepable(p)
    p.add_argument("--acs", action="store_true", help="use alternate convex search")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bandwidth", help="bandwidth-constrained optimum")
    common(p)
    sweepable(p)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("latency", help="latency-optimal partition and routing")
    common(p)
    sweepable(p)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("sweep", help="parameter sweep (defaults to the fixture's sweep)")
    common(p)
    sweepable(p)
    p.add_argument("--solver", choices=["solve", "bandwidth", "latency", "acs"],
                   default="solve")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decentralized", help="price iteration under every routing")
    common(p)
    p.add_argument("--gamma", type=float, default=1e-6)
    p.add_argument("--max-rounds", type=int, default=20_000)
    p.add_argument("--stop-tol", type=float, default=1e-8)
    p.add_argument("--schedule", choices=["constant", "diminishing"], default="constant")
    p.add_argument("--latency", action="store_true", help="optimise mean latency")
    p.set_defaults(func=cmd_decentralized)

    p = sub.add_parser("simulate", help="simulate a solution request by request")
    common(p)
    p.add_argument("--solver", choices=["solve", "bandwidth", "latency", "static"],
                   default="solve")
    p.add_argument("--horizon", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate",
                       help="check a scenario, or compare simulator and model on one cache")
    common(p, scenario_required=False)
    p.add_argument("--policy", default="LRU")
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--rate", type=float, default=15.0)
    p.add_argument("--slices", default="100,200,500")
    p.add_argument("--horizon", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("invalid scenario:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE


if __name__ == "__main__":
    sys.exit(main())
