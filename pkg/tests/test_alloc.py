import numpy as np
import pytest

from cachepart import che
from cachepart.alloc import (InstanceTooLarge, Objective, RoutingConfig,
                             brute_force_probabilistic, enumerate_optimal, evaluate_routing,
                             random_start, solve_acs, solve_allocation, solve_single_cache,
                             structural_routings)
from cachepart.model import (CacheNode, ContentProvider, DemandModel, Policy, UtilitySpec,
                             scenario_from_dict)

from _util import paper_doc, random_doc, scenario

CP1 = ContentProvider(DemandModel(10_000, 0.6, 10.0))
CP2 = ContentProvider(DemandModel(20_000, 0.8, 15.0))


def assignment(sol):
    return tuple(int(np.argmax(r)) for r in sol.routing)


def two_way_objective(cache, provs, x):
    curves = [che.curve_for_demand(cache.policy, p.demand) for p in provs]
    parts = (x, cache.capacity - x)
    return sum(p.weight * p.utility.value(cv.hit_rate(min(max(c, 0.0), cv.N)))
               for p, cv, c in zip(provs, curves, parts))


# -- single cache --------------------------------------------------------------------

def test_single_participant_takes_whole_cache():
    assert solve_single_cache(CacheNode(700.0), [CP1])[0] == pytest.approx(700.0)


def test_single_participant_capped_at_catalog():
    small = ContentProvider(DemandModel(300, 0.8, 5.0))
    assert solve_single_cache(CacheNode(700.0), [small])[0] == pytest.approx(300.0)


def test_empty_participant_set():
    assert solve_single_cache(CacheNode(100.0), []).size == 0


@pytest.mark.parametrize("policy", list(Policy))
def test_identical_participants_split_evenly(policy):
    alloc = solve_single_cache(CacheNode(900.0, policy), [CP1, CP1])
    assert alloc == pytest.approx([450.0, 450.0], rel=1e-6)


def test_shared_cache_at_5000_matches_grid_oracle():
    cache = CacheNode(5000.0)
    alloc = solve_single_cache(cache, [CP1, CP2])
    xs = np.linspace(0, 5000, 2001)
    vals = [two_way_objective(cache, [CP1, CP2], x) for x in xs]
    best = xs[int(np.argmax(vals))]
    assert alloc[0] == pytest.approx(best, abs=2 * 2.5)
    # the flatter CP1 catalog ends up with slightly more than half
    assert alloc[0] == pytest.approx(2581.14, abs=0.5)
    assert alloc.sum() == pytest.approx(5000.0, rel=1e-9)
    assert two_way_objective(cache, [CP1, CP2], alloc[0]) >= max(vals) - 1e-9


def test_kkt_equalises_weighted_marginals():
    provs = [ContentProvider(DemandModel(4000, 0.7, 8.0), 1.5, UtilitySpec("log")),
             ContentProvider(DemandModel(2500, 0.9, 12.0), 0.8, UtilitySpec("beta_fair", 0.5)),
             ContentProvider(DemandModel(3000, 0.5, 6.0), 1.0)]
    cache = CacheNode(1500.0, Policy.FIFO)
    alloc = solve_single_cache(cache, provs)
    assert alloc.sum() == pytest.approx(1500.0, rel=1e-9)
    marg = []
    for p, c in zip(provs, alloc):
        cv = che.curve_for_demand(cache.policy, p.demand)
        marg.append(p.weight * p.utility.derivative(cv.hit_rate(c)) * cv.marginal(c))
    assert np.ptp(marg) <= 1e-6 * max(marg)


# -- routing enumeration ----------------------------------------------------------------

def test_base_has_four_routings():
    sc = scenario(paper_doc())
    assert sc.routing_count() == 4
    assert [r.assignment for r in structural_routings(sc)] == [(0, 1), (0, 2), (1, 1), (1, 2)]


def test_empty_cache_column_is_zero():
    sc = scenario(paper_doc())
    sol = evaluate_routing(sc, RoutingConfig((0, 2)))
    assert np.all(sol.partition[:, 1] == 0)
    assert sol.check(sc) == []


def test_routing_must_use_connected_caches():
    with pytest.raises(ValueError):
        evaluate_routing(scenario(paper_doc()), RoutingConfig((2, 2)))


@pytest.mark.parametrize("c2,expected", [(1900, (0, 1)), (3200, (1, 1)), (300, (0, 2))])
def test_base_optimal_routings(c2, expected):
    sol = enumerate_optimal(scenario(paper_doc(), **{"caches[1].capacity": c2}))
    assert assignment(sol) == expected


def test_enumeration_dominates_every_routing():
    sc = scenario(paper_doc(), **{"caches[1].capacity": 1900})
    best, every = enumerate_optimal(sc, return_all=True)
    assert len(every) == 4
    assert all(s.objective <= best.objective for s in every)
    assert best.objective == max(s.objective for s in every)


def test_ties_go_to_lexicographically_smallest():
    # Cache 2 and Cache 3 identical for CP2: (0, 1) and (0, 2) tie
    sc = scenario(paper_doc(), **{"caches[1].capacity": 500})
    best, every = enumerate_optimal(sc, return_all=True)
    assert every[0].objective == pytest.approx(every[1].objective, rel=1e-12)
    assert assignment(best) == (0, 1)


def test_cap_exceeded_points_to_acs():
    with pytest.raises(InstanceTooLarge, match="ACS"):
        enumerate_optimal(scenario(paper_doc()), cap=3)


def test_decomposition_identity():
    rng = np.random.default_rng(3)
    for _ in range(4):
        sc = scenario_from_dict(random_doc(rng, 3, 3))
        for r in structural_routings(sc):
            sol = evaluate_routing(sc, r)
            total = 0.0
            for m, cache in enumerate(sc.caches):
                members = [k for k in range(sc.K) if r.assignment[k] == m]
                provs = [sc.providers[k] for k in members]
                for p, c in zip(provs, solve_single_cache(cache, provs)):
                    cv = che.curve_for_demand(cache.policy, p.demand)
                    total += p.weight * cv.hit_rate(min(c, cv.N))
            assert total == pytest.approx(sol.objective, rel=1e-12)


def test_optimum_nondecreasing_in_capacity():
    doc = paper_doc()
    vals = [enumerate_optimal(scenario(doc, **{"caches[1].capacity": c})).objective
            for c in range(300, 5001, 350)]
    assert np.all(np.diff(vals) >= -1e-9)
    vals = [enumerate_optimal(scenario(doc, **{"caches[0].capacity": c})).objective
            for c in (100, 400, 900, 2000)]
    assert np.all(np.diff(vals) >= -1e-9)


def test_nonlinear_utilities_couple_through_block_ascent():
    doc = paper_doc()
    doc["providers"][0]["utility"] = {"kind": "log"}
    doc["providers"][1]["utility"] = {"kind": "beta_fair", "beta": 2.0}
    sc = scenario_from_dict(doc)
    sol = enumerate_optimal(sc)
    assert sol.check(sc) == []
    # a probabilistic routing with both caches in use still solves to a feasible point
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.3, 0.7]])
    obj = Objective(sc)
    C, _ = solve_allocation(obj, P)
    assert np.all(C.sum(axis=0) <= sc.capacities + 1e-6)
    # no random perturbation of the allocation does better
    rng = np.random.default_rng(0)
    base = obj.value(C, P)
    for _ in range(30):
        m = int(rng.integers(3))
        ks = np.flatnonzero(P[:, m] > 0)
        if ks.size < 2:
            continue
        D = C.copy()
        delta = rng.uniform(-20, 20)
        D[ks[0], m] += delta
        D[ks[1], m] -= delta
        if np.all(D >= 0):
            assert obj.value(D, P) <= base + 1e-9


# -- oracle ----------------------------------------------------------------------------

def test_grid_step_one_is_enumeration():
    sc = scenario(paper_doc(), **{"caches[1].capacity": 1900})
    assert brute_force_probabilistic(sc, 1.0).objective == pytest.approx(
        enumerate_optimal(sc).objective, rel=1e-12)


def test_no_splitting_at_grid_tenth():
    for c2 in (800, 1900, 3500):
        sc = scenario(paper_doc(), **{"caches[1].capacity": c2})
        assert brute_force_probabilistic(sc, 0.1).objective <= \
            enumerate_optimal(sc).objective + 1e-6


def test_single_provider_single_cache_oracle():
    doc = {"caches": [{"capacity": 250}], "providers": [{"catalog_size": 2000,
                                                         "zipf_alpha": 0.8,
                                                         "aggregate_rate": 15}],
           "adjacency": [[1]]}
    sc = scenario_from_dict(doc)
    sol = brute_force_probabilistic(sc, 0.1)
    rates = sc.providers[0].rates
    assert sol.objective == pytest.approx(che.hit_rate("LRU", rates, 250), rel=1e-12)


def test_grid_step_must_divide_one():
    with pytest.raises(ValueError):
        brute_force_probabilistic(scenario(paper_doc()), 0.3)


# -- alternate convex search -----------------------------------------------------------

def test_acs_fixed_point_at_optimum():
    sc = scenario(paper_doc(), **{"caches[1].capacity": 1900})
    best = enumerate_optimal(sc)
    sol = solve_acs(sc, best)
    assert sol.info["rounds"] == 1
    assert sol.objective == pytest.approx(best.objective, rel=1e-9)
    assert np.array_equal(sol.routing, best.routing)


def test_acs_random_starts_mostly_reach_optimum():
    # target taken as stated: 40 of 50 Dirichlet starts within 1e-3 of the optimum
    sc = scenario(paper_doc())
    best = enumerate_optimal(sc).objective
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(50):
        sol = solve_acs(sc, random_start(sc, rng))
        h = sol.info["history"]
        assert np.all(np.diff(h) >= -1e-9 * abs(h[0]))
        assert sol.check(sc) == []
        hits += abs(sol.objective - best) <= 1e-3 * abs(best)
    assert hits >= 40


def test_acs_result_is_partial_optimum():
    sc = scenario(paper_doc(), **{"caches[1].capacity": 2600})
    obj = Objective(sc)
    sol = solve_acs(sc, random_start(sc, np.random.default_rng(7)))
    C, P = sol.partition, sol.routing
    f = obj.value(C, P)
    rng = np.random.default_rng(8)
    for _ in range(40):
        # routing block: any other feasible routing at the same slices
        Q = np.zeros_like(P)
        for k, conn in enumerate(sc.connected):
            Q[k, list(conn)] = rng.dirichlet(np.ones(len(conn)))
        assert obj.value(C, Q) <= f + 1e-9 * abs(f)
    # allocation block: the exact allocation for P cannot beat the incumbent
    C2, _ = solve_allocation(obj, P)
    assert obj.value(C2, P) <= f + 1e-9 * abs(f)


def test_acs_respects_bandwidth():
    from _util import fixture_doc
    sc = scenario_from_dict(fixture_doc("paper_bandwidth.json"))
    rng = np.random.default_rng(1)
    for _ in range(5):
        sol = solve_acs(sc, random_start(sc, rng))
        assert sol.check(sc) == []
