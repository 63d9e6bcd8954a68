import json

import numpy as np
import pytest

from cachepart.alloc import enumerate_optimal
from cachepart.model import (DemandModel, Policy, ScenarioError, Solution, UtilitySpec,
                             file_rates, load_fixture, require_valid, scenario_from_dict,
                             scenario_to_dict, validate)

from _util import fixture_doc, paper_doc


def codes(sc):
    return {v.code for v in validate(sc)}


def test_file_rates_uniform():
    assert np.allclose(file_rates(DemandModel(4, 0.0, 8.0)), [2, 2, 2, 2])


def test_file_rates_two_files():
    assert np.allclose(file_rates(DemandModel(2, 1.0, 3.0)), [2, 1])


def test_file_rates_against_partial_sum():
    lam = file_rates(DemandModel(10_000, 0.6, 10.0))
    H = sum(j ** -0.6 for j in range(1, 10_001))
    assert lam[0] == pytest.approx(10.0 / H, rel=1e-12)
    assert lam.sum() == pytest.approx(10.0, rel=1e-9)
    assert np.all(np.diff(lam) <= 0)
    assert np.all(lam > 0)


def test_file_rates_homogeneous_in_rate():
    a = file_rates(DemandModel(500, 0.9, 3.0))
    b = file_rates(DemandModel(500, 0.9, 6.0))
    assert np.array_equal(2 * a, b)


def test_rates_are_read_only():
    lam = DemandModel(10, 0.5, 1.0).rates
    with pytest.raises(ValueError):
        lam[0] = 5


@pytest.mark.parametrize("args", [(0, 0.5, 1), (10, -0.1, 1), (10, 0.5, 0), (2.5, 0.5, 1)])
def test_demand_model_rejects_bad_fields(args):
    with pytest.raises(ValueError):
        DemandModel(*args)


def test_policy_parse():
    assert Policy.parse("lru") is Policy.LRU
    assert Policy.parse(Policy.FIFO) is Policy.FIFO
    with pytest.raises(ValueError):
        Policy.parse("LFU")


@pytest.mark.parametrize("kind,beta", [("linear", None), ("log", None), ("beta_fair", 0.5),
                                       ("beta_fair", 2.0), ("beta_fair", 0.0)])
def test_hit_utilities_increasing_and_concave(kind, beta):
    u = UtilitySpec(kind, beta)
    x = np.linspace(0.1, 20, 400)
    v = u.value(x)
    step = x[1] - x[0]
    assert np.all(u.derivative(x) >= 0)
    assert np.all(np.diff(v) >= 0)
    assert np.all(np.diff(v, 2) / step ** 2 <= 1e-9)
    # derivative consistent with the values
    fd = (u.value(x + 1e-6) - u.value(x - 1e-6)) / 2e-6
    assert np.allclose(fd, u.derivative(x), rtol=1e-6)


def test_utility_values():
    assert UtilitySpec("log").value(np.e) == pytest.approx(1.0)
    assert UtilitySpec("beta_fair", 2.0).value(4.0) == pytest.approx(-0.25)
    assert UtilitySpec("negated_latency").value(3.0) == -3.0
    assert UtilitySpec("log").value(0.0) == -np.inf


@pytest.mark.parametrize("beta", [None, 1.0, -0.5])
def test_beta_fair_needs_valid_beta(beta):
    with pytest.raises(ValueError):
        UtilitySpec("beta_fair", beta)


def test_unknown_utility_rejected():
    with pytest.raises(ValueError):
        UtilitySpec("sqrt")


def test_base_fixture_is_valid():
    assert validate(load_fixture("paper_base.json")) == []


def test_bandwidth_fixture_is_valid():
    assert validate(load_fixture("paper_bandwidth.json")) == []


def test_disconnected_provider_reported():
    doc = paper_doc()
    doc["adjacency"][0] = [0, 0, 0]
    assert "provider_disconnected" in codes(scenario_from_dict(doc))


def test_violations_collected_not_raised():
    doc = paper_doc()
    doc["caches"][0]["capacity"] = 0
    doc["providers"][1]["weight"] = -1
    doc["adjacency"][1][0] = 2
    assert codes(scenario_from_dict(doc)) == {"nonpositive_capacity", "nonpositive_weight",
                                              "adjacency_not_binary"}


def test_bandwidth_checks():
    doc = fixture_doc("paper_bandwidth.json")
    doc["bandwidth"][0] = [6, 3, 0]          # 9 < R_1 = 10
    doc["bandwidth"][1][0] = 1               # link that does not exist
    assert codes(scenario_from_dict(doc)) == {"bandwidth_insufficient",
                                              "bandwidth_on_missing_link"}


def test_delay_checks():
    doc = fixture_doc("paper_latency.json")
    doc["delays"]["hit"][0][0] = 200
    assert codes(scenario_from_dict(doc)) == {"bad_delay"}
    doc.pop("delays")
    assert "latency_utility_without_delays" in codes(scenario_from_dict(doc))


def test_require_valid_raises_with_codes():
    doc = paper_doc()
    doc["adjacency"][1] = [0, 0, 0]
    with pytest.raises(ScenarioError) as err:
        require_valid(scenario_from_dict(doc))
    assert err.value.violations[0].code == "provider_disconnected"


def test_shape_mismatch_rejected():
    doc = paper_doc()
    doc["adjacency"] = [[1, 1], [0, 1]]
    with pytest.raises(ValueError):
        scenario_from_dict(doc)


def test_json_round_trip():
    sc = load_fixture("paper_latency.json")
    again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
    assert scenario_to_dict(again) == scenario_to_dict(sc)


def test_with_capacity_copies():
    sc = load_fixture("paper_base.json")
    bigger = sc.with_capacity(1, 1900)
    assert bigger.caches[1].capacity == 1900
    assert sc.caches[1].capacity == 1200


def test_solution_check_flags_problems():
    sc = load_fixture("paper_base.json")
    sol = Solution(partition=np.array([[600.0, 0, 0], [0, 0, 100]]),
                   routing=np.array([[0.5, 0.4, 0.0], [0, 0, 1.0]]),
                   per_cp_hit_rate=np.zeros(2), objective=0.0)
    problems = sol.check(sc)
    assert any("over capacity" in p for p in problems)
    assert any("sums to" in p for p in problems)


def test_common_weight_scaling_keeps_argmax():
    doc = paper_doc()
    a = enumerate_optimal(scenario_from_dict(doc))
    for p in doc["providers"]:
        p["weight"] = 3.5
    b = enumerate_optimal(scenario_from_dict(doc))
    assert np.array_equal(a.routing, b.routing)
    assert np.allclose(a.partition, b.partition, atol=1e-6)
    assert b.objective == pytest.approx(3.5 * a.objective, rel=1e-9)
