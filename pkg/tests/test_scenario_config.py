"""Tests for scenario documents."""

import json
from pathlib import Path

import numpy as np
import pytest

from cvar_filter.barrier import LinearBarrier, MinBarrier
from cvar_filter.risk import TailConvention
from cvar_filter.safety_filter import FilterMethod
from cvar_filter.scenario_config import (
    AxisReference,
    BoxSpec,
    ScenarioConfig,
    ScenarioConfigError,
    apply_overrides,
    config_hash,
    load_scenario,
    parse_override,
    s2s_matrices,
    save_scenario,
)
from cvar_filter.scenarios import builtin_scenario


@pytest.fixture
def case1():
    return builtin_scenario("case1")


def field_of(excinfo) -> str:
    return excinfo.value.field


class TestRoundTrip:
    """Tests for dict/YAML/JSON round trips and hashing."""

    @pytest.mark.parametrize("case", ["case1", "case2", "case3"])
    def test_dict_round_trip(self, case):
        cfg = builtin_scenario(case)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("suffix", [".yaml", ".json"])
    def test_file_round_trip(self, case1, tmp_path, suffix):
        path = save_scenario(case1, tmp_path / f"case1{suffix}")
        loaded = load_scenario(path)
        assert loaded == case1
        assert config_hash(loaded) == config_hash(case1)

    def test_hash_is_sha256_and_tracks_content(self, case1):
        digest = config_hash(case1)
        assert len(digest) == 64
        assert config_hash(builtin_scenario("case1")) == digest
        assert config_hash(case1.with_beta(0.5)) != digest

    def test_loads_hand_written_document(self, tmp_path):
        path = tmp_path / "tiny.yaml"
        path.write_text(
            """
schema_version: 1
name: tiny
system:
  template: matrices
  A: [[1.0]]
  B: [[1.0]]
  u_lower: [-1.0]
  u_upper: [1.0]
disturbance:
  w: [[-0.1], [0.0], [0.1]]
barrier: {H: [-1.0], offset: 1.0}
cert: {alpha: 0.9, beta: 0.5}
legacy_law: {gain: 1.0, axes: [{position_index: 0, speed: 0.2}]}
x0: [0.0]
steps: 5
num_rollouts: 3
"""
        )
        cfg = load_scenario(path)
        sys = cfg.system_model()
        assert (sys.n, sys.m, sys.num_outcomes) == (1, 1, 3)
        assert cfg.method is FilterMethod.EPIGRAPH
        assert cfg.master_seed == 7
        assert isinstance(cfg.barrier_expr(), LinearBarrier)


class TestValidation:
    """Every rejected document names the offending field."""

    def test_probs_not_summing_to_one(self, case1):
        doc = case1.to_dict()
        doc["disturbance"]["uniform"] = False
        doc["disturbance"]["probs"] = [0.09] * 10
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "disturbance.probs"

    def test_probs_required_when_not_uniform(self, case1):
        doc = case1.to_dict()
        doc["disturbance"]["uniform"] = False
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "disturbance.probs"

    def test_unknown_top_level_field(self, case1):
        doc = case1.to_dict()
        doc["colour"] = "blue"
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "colour"

    def test_x0_dimension(self, case1):
        doc = case1.to_dict()
        doc["x0"] = [0.0, 0.0, 0.0]
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "x0"

    def test_barrier_dimension(self, case1):
        doc = case1.to_dict()
        doc["barrier"] = {"H": [1.0, 0.0, 0.0], "offset": 0.0}
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "barrier"

    def test_ragged_disturbance(self, case1):
        doc = case1.to_dict()
        doc["disturbance"]["w"][3] = [0.0]
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "disturbance.w"

    @pytest.mark.parametrize("beta", [0.0, 1.0, 1.5])
    def test_beta_range(self, case1, beta):
        doc = case1.to_dict()
        doc["cert"]["beta"] = beta
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "cert.beta"

    def test_alpha_range(self, case1):
        doc = case1.to_dict()
        doc["cert"]["alpha"] = 1.0
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "cert.alpha"

    def test_rollouts_positive(self, case1):
        doc = case1.to_dict()
        doc["num_rollouts"] = 0
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "num_rollouts"

    def test_steps_integer(self, case1):
        doc = case1.to_dict()
        doc["steps"] = 2.5
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "steps"

    def test_schema_version(self, case1):
        doc = case1.to_dict()
        doc["schema_version"] = 2
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "schema_version"

    def test_unknown_method(self, case1):
        doc = case1.to_dict()
        doc["method"] = "gradient"
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "method"

    def test_missing_section(self, case1):
        doc = case1.to_dict()
        del doc["legacy_law"]
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "legacy_law"

    def test_legacy_axis_index(self, case1):
        doc = case1.to_dict()
        doc["legacy_law"]["axes"][0]["position_index"] = 5
        with pytest.raises(ScenarioConfigError) as excinfo:
            ScenarioConfig.from_dict(doc)
        assert field_of(excinfo) == "legacy_law.axes.0.position_index"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_scenario(tmp_path / "absent.yaml")

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ScenarioConfigError) as excinfo:
            load_scenario(path)
        assert field_of(excinfo) == "document"


class TestOverrides:
    """Tests for dotted-path overrides."""

    def test_parse_override(self):
        assert parse_override("cert.beta=0.5") == ("cert.beta", 0.5)
        assert parse_override("x0=[1, 2]") == ("x0", [1, 2])
        assert parse_override("filter_enabled=false") == ("filter_enabled", False)

    def test_parse_override_needs_equals(self):
        with pytest.raises(ScenarioConfigError):
            parse_override("cert.beta")

    def test_apply_overrides(self, case1):
        doc = apply_overrides(case1.to_dict(), {"cert.beta": 0.5, "legacy_law.axes.0.speed": 0.2})
        cfg = ScenarioConfig.from_dict(doc)
        assert cfg.cert.beta.beta == 0.5
        assert cfg.legacy_law.axes[0].speed == 0.2

    def test_unknown_override_path(self, case1):
        with pytest.raises(ScenarioConfigError) as excinfo:
            apply_overrides(case1.to_dict(), {"cert.gamma": 0.5})
        assert field_of(excinfo) == "cert.gamma"

    def test_list_index_out_of_range(self, case1):
        with pytest.raises(ScenarioConfigError):
            apply_overrides(case1.to_dict(), {"legacy_law.axes.3.speed": 0.2})


class TestDynamics:
    """Tests for the surrogate walking model and the legacy law."""

    def test_s2s_block_structure(self):
        params = {"axes": 2, "dt": 0.1, "decay": 0.5, "input_gain_position": 1.0, "input_gain_velocity": 0.5}
        A, B = s2s_matrices(params)
        assert A.shape == (4, 4)
        assert B.shape == (4, 2)
        np.testing.assert_allclose(A[:2, :2], [[1.0, 0.1], [0.0, 0.5]])
        np.testing.assert_allclose(A[:2, 2:], 0.0)
        np.testing.assert_allclose(B[:, 1], [0.0, 0.0, 1.0, 0.5])

    def test_box_sampling_is_seeded(self):
        box = BoxSpec((-0.05, -0.01), (0.05, 0.01), count=10, seed=7)
        samples = np.array(box.sample())
        assert samples.shape == (10, 2)
        assert np.all(np.abs(samples[:, 0]) <= 0.05)
        assert np.all(np.abs(samples[:, 1]) <= 0.01)
        assert box.sample() == BoxSpec((-0.05, -0.01), (0.05, 0.01), count=10, seed=7).sample()

    def test_reference(self):
        axis = AxisReference(position_index=2, amplitude=2.0, period=20.0, offset=-0.5)
        assert axis.at(0) == pytest.approx(-0.5)
        assert axis.at(5) == pytest.approx(1.5)

    def test_legacy_law_steps_toward_reference(self, case1):
        law = case1.legacy_controller()
        np.testing.assert_allclose(law(np.array([0.3, 0.0]), 0), [-0.2])

    def test_outcome_matrices(self):
        doc = builtin_scenario("case1").to_dict()
        doc["disturbance"]["w"] = [[0.0, 0.0], [0.01, 0.0]]
        doc["disturbance"]["box"] = None
        doc["system"]["outcome_matrices"] = [
            {"A": [[1.0, 0.1], [0.0, 0.5]], "B": [[1.0], [0.5]]},
            {"A": [[1.0, 0.1], [0.0, 0.4]], "B": [[0.9], [0.5]]},
        ]
        sys = ScenarioConfig.from_dict(doc).system_model()
        assert sys.outcomes[1].A[1, 1] == 0.4
        assert sys.outcomes[1].B[0, 0] == 0.9

    def test_case3_barrier_is_a_minimum(self):
        cfg = builtin_scenario("case3")
        assert isinstance(cfg.barrier_expr(), MinBarrier)
        assert cfg.x0 == (0.0, 0.0, -1.0, 0.0)

    def test_json_document_has_schema_version(self, case1, tmp_path):
        path = save_scenario(case1, tmp_path / "case1.json")
        assert json.loads(path.read_text())["schema_version"] == 1


EXAMPLE_DIR = Path(__file__).resolve().parent.parent / "example"


class TestExampleDocuments:
    """The shipped example documents load and match the built-in cases."""

    @pytest.mark.parametrize("case", ["case1", "case2", "case3"])
    def test_matches_builtin(self, case):
        assert load_scenario(EXAMPLE_DIR / f"{case}.yaml") == builtin_scenario(case)

    def test_dccp_example(self):
        cfg = load_scenario(EXAMPLE_DIR / "dccp-upper-tail.yaml")
        assert cfg.method is FilterMethod.DCCP
        assert cfg.dccp.tail is TailConvention.UPPER_TAIL
