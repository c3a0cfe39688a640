import json
import os

import pytest

from data.reader import ScenarioError, apply_overrides, config_hash, load_scenario, parse_scenario

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def minimal(**kwargs):
    document = {
        "name": "tiny",
        "horizon": 100,
        "traffic": {"base_rate": 5},
        "services": [{"name": "A", "model": "unbounded"}, {"name": "B", "capacity": 10}],
    }
    document.update(kwargs)
    return document


class TestLoadScenario:

    @pytest.mark.parametrize("name", ["storm", "mm1m", "burst", "hpa"])
    def test_shipped_scenarios_validate(self, name):
        config = load_scenario(os.path.join(SCENARIOS, f"{name}.json"))
        assert config.name == name

    def test_storm_variants(self):
        config = load_scenario(os.path.join(SCENARIOS, "storm.json"))

        assert [v.name for v in config.resolved_variants()] == ["none", "legacy", "standard", "adaptive",
                                                                  "retryguard"]
        assert config.variant("retryguard").controller.threshold == 0.2
        assert config.downstream.scaler.decision_delay == 600

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario(str(tmp_path / "nope.json"))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"name\": ")

        with pytest.raises(ScenarioError, match="malformed"):
            load_scenario(str(path))


class TestValidation:

    def test_defaults_filled(self):
        config = parse_scenario(minimal())

        assert config.seeds == [1]
        assert config.service_model == "capacity-slot"
        assert [v.name for v in config.resolved_variants()] == ["standard"]

    def test_unknown_field(self):
        with pytest.raises(ScenarioError):
            parse_scenario(minimal(colour="blue"))

    def test_edge_to_unknown_service(self):
        with pytest.raises(ScenarioError, match="unknown service"):
            parse_scenario(minimal(edge=["A", "C"]))

    def test_non_positive_horizon(self):
        with pytest.raises(ScenarioError):
            parse_scenario(minimal(horizon=0))

    def test_warmup_longer_than_horizon(self):
        with pytest.raises(ScenarioError, match="warmup"):
            parse_scenario(minimal(warmup=100))

    def test_baseline_must_be_variant(self):
        with pytest.raises(ScenarioError, match="baseline"):
            parse_scenario(minimal(baseline="retryguard"))

    def test_unknown_variant(self):
        with pytest.raises(ScenarioError):
            parse_scenario(minimal()).variant("legacy")


class TestOverrides:

    def test_dotted_paths(self):
        config = apply_overrides(parse_scenario(minimal()), {"traffic.base_rate": 9, "services.1.capacity": 20})

        assert config.traffic.base_rate == 9
        assert config.downstream.capacity == 20

    def test_bad_path(self):
        with pytest.raises(ScenarioError, match="cannot override"):
            apply_overrides(parse_scenario(minimal()), {"services.7.capacity": 1})

    def test_invalid_value_revalidated(self):
        with pytest.raises(ScenarioError):
            apply_overrides(parse_scenario(minimal()), {"horizon": -5})


class TestConfigHash:

    def test_key_order_irrelevant(self):
        document = minimal()
        shuffled = json.loads(json.dumps(dict(reversed(list(document.items())))))

        assert config_hash(parse_scenario(document)) == config_hash(parse_scenario(shuffled))

    def test_explicit_defaults_hash_equal(self):
        assert config_hash(parse_scenario(minimal())) == config_hash(parse_scenario(minimal(seeds=[1])))

    def test_changes_with_content(self):
        assert config_hash(parse_scenario(minimal())) != config_hash(parse_scenario(minimal(horizon=101)))
