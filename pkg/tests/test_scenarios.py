"""Scenario schema validation and the shipped catalogue."""
import pytest

from geobft.scenario import ScenarioError, load_scenario, shipped_scenarios

BASE = {
    "name": "x", "mode": "spider", "irmc": "rc", "duration_ms": 1000,
    "f_a": 1, "f_e": 1,
    "topology": {"regions": {"V": 4, "O": 3}, "wan_ms": {"V-O": 35}},
    "agreement_region": "V",
    "groups": [{"id": 1, "region": "V"}, {"id": 2, "region": "O"}],
    "clients": [{"count": 1, "region": "V", "rate_per_s": 5}],
}


def variant(**overrides):
    raw = dict(BASE)
    raw.update(overrides)
    return raw


def test_base_loads():
    cfg = load_scenario(variant())
    assert cfg.fault_params.agreement_size == 4
    assert cfg.fault_params.execution_size == 3


def test_commit_capacity_must_exceed_k_e():
    with pytest.raises(ScenarioError, match="commit_capacity"):
        load_scenario(variant(params={"commit_capacity": 10, "k_e": 10}))


def test_ag_win_must_cover_k_a():
    with pytest.raises(ScenarioError, match="ag_win"):
        load_scenario(variant(params={"ag_win": 5, "k_a": 10}))


def test_z_bounded_by_group_count():
    with pytest.raises(ScenarioError, match="z"):
        load_scenario(variant(params={"z": 2}))


def test_unknown_region_rejected():
    with pytest.raises(ScenarioError, match="unknown region"):
        load_scenario(variant(agreement_region="Q"))


def test_fault_counts_over_threshold_rejected():
    faults = [{"node": "ex:1:0", "kind": "crash"},
              {"node": "ex:1:1", "kind": "crash"}]
    with pytest.raises(ScenarioError, match="threshold"):
        load_scenario(variant(faults=faults))
    # explicitly marked scenarios are allowed
    cfg = load_scenario(variant(faults=faults, beyond_threshold=True))
    assert cfg.fault_plan.beyond_threshold


def test_shipped_scenarios_all_load():
    names = shipped_scenarios()
    assert len(names) >= 10
    for name in names:
        cfg = load_scenario(name)
        assert cfg.name == name


def test_unknown_mode_rejected():
    with pytest.raises(ScenarioError, match="mode"):
        load_scenario(variant(mode="hybrid"))
