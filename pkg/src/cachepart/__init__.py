"""Joint cache partitioning and request routing for content providers sharing caches."""
from importlib.metadata import PackageNotFoundError, version

from .alloc import (InstanceTooLarge, Objective, RoutingConfig, brute_force_probabilistic,
                    enumerate_optimal, evaluate_routing, random_start, solve_acs,
                    solve_allocation, solve_single_cache, structural_routings)
from .bandwidth import BandwidthRouting, enumerate_bandwidth_routings, solve_bandwidth
from .che import HitCurve, hit_rate, marginal_hit_rate, scaled_hit_rate, solve_T
from .decentral import (cp_best_response, price_update, run_parallel_exploration, run_routing,
                        run_routing_bandwidth)
from .latency import DelayProfile, LatencyObjective, mean_latency, solve_latency
from .model import (CacheNode, ContentProvider, DemandModel, Policy, Scenario, ScenarioError,
                    Solution, UtilitySpec, load_fixture, load_scenario, scenario_from_dict,
                    validate)
from .sim import SimConfig, simulate_slice, simulate_solution

__all__ = [
    "InstanceTooLarge",
    "Objective",
    "RoutingConfig",
    "brute_force_probabilistic",
    "enumerate_optimal",
    "evaluate_routing",
    "random_start",
    "solve_acs",
    "solve_allocation",
    "solve_single_cache",
    "structural_routings",
    "BandwidthRouting",
    "enumerate_bandwidth_routings",
    "solve_bandwidth",
    "HitCurve",
    "hit_rate",
    "marginal_hit_rate",
    "scaled_hit_rate",
    "solve_T",
    "cp_best_response",
    "price_update",
    "run_parallel_exploration",
    "run_routing",
    "run_routing_bandwidth",
    "DelayProfile",
    "LatencyObjective",
    "mean_latency",
    "solve_latency",
    "CacheNode",
    "ContentProvider",
    "DemandModel",
    "Policy",
    "Scenario",
    "ScenarioError",
    "Solution",
    "UtilitySpec",
    "load_fixture",
    "load_scenario",
    "scenario_from_dict",
    "validate",
    "SimConfig",
    "simulate_slice",
    "simulate_solution",
    "__version__",
]

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
