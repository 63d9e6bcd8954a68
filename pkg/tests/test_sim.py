import numpy as np
import pytest

from cachepart import che
from cachepart.alloc import enumerate_optimal
from cachepart.experiments import static_routing_baseline
from cachepart.latency import LatencyObjective, solve_latency
from cachepart.model import DemandModel, Policy, file_rates, load_fixture
from cachepart.sim import AliasTable, SimConfig, simulate_slice, simulate_solution, simulate_stream

from _util import paper_doc, scenario

SMALL = DemandModel(2000, 0.8, 15.0)


def test_alias_table_frequencies():
    w = np.array([5.0, 1.0, 0.0, 3.0, 1.0])
    draws = AliasTable(w).draw(np.random.default_rng(0), 200_000)
    freq = np.bincount(draws, minlength=5) / draws.size
    assert freq[2] == 0.0
    assert np.allclose(freq, w / w.sum(), atol=4e-3)


def test_alias_table_rejects_bad_weights():
    for bad in ([], [0.0, 0.0], [1.0, -1.0]):
        with pytest.raises(ValueError):
            AliasTable(bad)


def test_config_checks():
    with pytest.raises(ValueError):
        SimConfig("LRU", 10)
    with pytest.raises(ValueError):
        SimConfig("LRU", 10, demand=SMALL, rates=np.ones(3))
    with pytest.raises(ValueError):
        SimConfig("LRU", 3000, demand=SMALL)
    with pytest.raises(ValueError):
        SimConfig("LRU", 10, demand=SMALL, horizon=100, warmup=100)
    assert SimConfig("fifo", 10, demand=SMALL, horizon=1000).warmup == 100


@pytest.mark.parametrize("policy", list(Policy))
def test_hand_traced_stream(policy):
    # size-1 cache: a hit only when the same file repeats
    stream = np.array([0, 0, 1, 1, 0, 1, 1, 1])
    ratio, per_file, _ = simulate_stream(policy, stream, 1, 0, 2, 0)
    assert ratio == pytest.approx(4 / 8)
    assert per_file.tolist() == [1, 3]


def test_lru_trace_with_two_slots():
    stream = np.array([0, 1, 2, 0, 1, 0, 2])
    # LRU: 0 1 2(evict 0) 0(miss, evict 1) 1(miss, evict 2) 0(hit) 2(miss)
    ratio, _, _ = simulate_stream("LRU", stream, 2, 0, 3, 0)
    assert ratio == pytest.approx(1 / 7)
    # FIFO: 0 1 2(evict 0) 0(miss, evict 1) 1(miss, evict 2) 0(hit) 2(miss)
    ratio, _, _ = simulate_stream("FIFO", stream, 2, 0, 3, 0)
    assert ratio == pytest.approx(1 / 7)


@pytest.mark.parametrize("policy", list(Policy))
def test_slice_bounds(policy):
    full = simulate_slice(SimConfig(policy, 2000, demand=SMALL, horizon=50_000))
    assert full.hit_rate > 0.9 * 15.0       # only cold misses in warm-up leak in
    empty = simulate_slice(SimConfig(policy, 0, demand=SMALL, horizon=20_000))
    assert empty.hit_rate == 0.0


def test_full_slice_after_warmup_is_all_hits():
    rates = np.full(50, 1.0)
    res = simulate_slice(SimConfig("LRU", 50, rates=rates, horizon=20_000, warmup=5_000))
    assert res.hit_ratio == 1.0
    assert res.hit_rate == pytest.approx(50.0)


@pytest.mark.parametrize("policy", list(Policy))
def test_slice_matches_che_model(policy):
    res = simulate_slice(SimConfig(policy, 120, demand=SMALL, horizon=400_000, seed=3))
    assert res.rel_err <= 0.03
    assert res.half_width < 0.02 * res.hit_rate


def test_same_seed_same_result():
    cfg = SimConfig("RANDOM", 200, demand=SMALL, horizon=30_000, seed=11)
    a, b = simulate_slice(cfg), simulate_slice(cfg)
    assert a.hit_rate == b.hit_rate
    assert np.array_equal(a.per_file_hits, b.per_file_hits)
    c = simulate_slice(SimConfig("RANDOM", 200, demand=SMALL, horizon=30_000, seed=12))
    assert c.hit_rate != a.hit_rate


def test_thinned_stream_matches_scaled_model():
    # a fraction p of requests through a slice sees hit rate p * H(C)
    rates = file_rates(SMALL)
    p = 0.3
    res = simulate_slice(SimConfig("LRU", 150, rates=p * rates, horizon=400_000, seed=5))
    model = che.scaled_hit_rate("LRU", rates, 150.0, p)
    assert res.hit_rate == pytest.approx(model, rel=0.02)


def test_solution_replay_and_baseline_ordering():
    sc = scenario(paper_doc(), **{"caches[1].capacity": 1900})
    opt = enumerate_optimal(sc)
    base = static_routing_baseline(sc)
    a = simulate_solution(sc, opt, horizon=300_000, seed=1)
    b = simulate_solution(sc, base, horizon=300_000, seed=1)
    assert np.allclose(a.arrival_rates.sum(axis=1), [10.0, 15.0])
    assert a.hit_rates == pytest.approx(opt.per_cp_hit_rate, rel=0.03)
    assert a.objective >= b.objective


def test_split_routing_thins_arrivals():
    sc = scenario(paper_doc())
    sol = static_routing_baseline(sc)
    res = simulate_solution(sc, sol, horizon=200_000, seed=2)
    expect = sol.routing * np.array([10.0, 15.0])[:, None]
    assert np.allclose(res.arrival_rates, expect, rtol=0.02, atol=1e-12)


def test_replay_reports_latency_with_delays():
    sc = load_fixture("paper_latency.json")
    sol = solve_latency(sc)
    res = simulate_solution(sc, sol, horizon=200_000, seed=4)
    model = LatencyObjective(sc).latencies(sol.partition, sol.routing)
    assert res.latencies == pytest.approx(model, rel=0.03)
    assert np.isnan(res.objective)
