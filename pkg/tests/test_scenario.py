import pytest

from aodvguard.scenario import (
    TABLE1_FLOWS, AttackerProfile, ScenarioConfig, ScenarioError, TrafficFlow,
    config_from_dict, parse_scenario, validate,
)


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_default_scenario(tmp_path):
    cfg = parse_scenario(write(tmp_path, ""))
    assert cfg == ScenarioConfig()
    assert cfg.node_count == 69
    assert cfg.field_size == (2000.0, 2000.0)
    assert cfg.radio_range == 250
    assert cfg.sim_duration == 17.2
    assert cfg.attackers == (AttackerProfile(node=0, flood_rate=20.0, start=1.0, end=17.0),)
    assert [(f.src, f.dst, f.start, f.end) for f in cfg.flows] == [
        (48, 20, 11, 16), (18, 27, 5, 12), (31, 66, 6, 11), (45, 16, 9, 12)]
    assert cfg.flows == TABLE1_FLOWS


def test_zero_nodes_names_node_count(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, "seed: 2\nnode_count: 0\n"))
    assert exc.value.field == "node_count"
    assert exc.value.line == 2
    assert "s.yaml:2" in str(exc.value)


def test_accept_limit_above_blacklist_limit(tmp_path):
    text = "defense:\n  accept_limit: 12\n  blacklist_limit: 10\n"
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, text))
    assert "accept_limit < blacklist_limit violated" in str(exc.value)
    assert exc.value.field.startswith("defense")


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, "node_count: 10\nnodecount: 12\n"))
    assert exc.value.field == "nodecount" and exc.value.line == 2
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, "defense:\n  accept_limt: 2\n"))
    assert exc.value.field == "defense.accept_limt"


def test_flows_and_attackers_replace_defaults(tmp_path):
    text = """
node_count: 10
flows:
  - {src: 1, dst: 2, start: 1, end: 3}
attackers: []
placement: seeded_uniform
"""
    cfg = parse_scenario(write(tmp_path, text))
    assert cfg.flows == (TrafficFlow(1, 2, 1.0, 3.0),)
    assert cfg.attackers == ()
    assert cfg.placement == "seeded_uniform"


def test_explicit_placement(tmp_path):
    cfg = parse_scenario(write(tmp_path, "node_count: 2\nflows: []\nattackers: []\n"
                                         "placement: {explicit: [[0, 0], [100, 0]]}\n"))
    assert cfg.placement == ((0.0, 0.0), (100.0, 0.0))


def test_flow_to_missing_node_rejected(tmp_path):
    text = "node_count: 5\nattackers: []\nflows:\n  - {src: 1, dst: 9, start: 1, end: 2}\n"
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, text))
    assert exc.value.field == "flows[0].dst"
    assert exc.value.line == 4


def test_syntax_error_reports_location(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(write(tmp_path, "flows: [\n"))
    assert exc.value.path.endswith("s.yaml")


def test_config_from_dict_type_errors():
    with pytest.raises(ScenarioError):
        config_from_dict({"node_count": "many"})
    with pytest.raises(ScenarioError):
        config_from_dict({"defense_enabled": "yes please"})
    with pytest.raises(ScenarioError):
        config_from_dict([1, 2])


def test_validate_rejects_bad_values():
    with pytest.raises(ScenarioError):
        validate(ScenarioConfig(sim_duration=-1))
    with pytest.raises(ScenarioError):
        validate(ScenarioConfig(flows=(TrafficFlow(3, 3, 1.0, 2.0),)))
    with pytest.raises(ScenarioError):
        validate(ScenarioConfig(attackers=(AttackerProfile(node=0, target_mode="everyone"),)))


def test_fingerprint_ignores_seed_and_defense_only():
    a = ScenarioConfig()
    assert a.fingerprint() == a.with_(seed=9, defense_enabled=False).fingerprint()
    assert a.fingerprint() != a.with_(node_count=70).fingerprint()
