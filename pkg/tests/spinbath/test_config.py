import numpy as np
import pytest

from spinbath.config import (
    ExperimentConfig,
    available_presets,
    config_hash,
    load_config,
    load_preset,
    parse_config,
    with_overrides,
)
from spinbath.errors import ConfigError
from spinbath.types import AmplitudeMode, ModelKind, ScenarioKind

MINIMAL_TOML = """
model = "quantum"
sequences = ["hahn", "cpmg:4"]
n_configurations = 3
root_seed = 9

[field]
offsets_mT = [0.15, 9.0]

[bath]
cutoff_nm = 2.5
orientation = "theta:30"

[time_grid]
t_max_ms = 0.5
n_points = 11
"""


class TestDefaults:
    """Tests for the default configuration."""

    def test_empty_table(self):
        config = parse_config({})
        assert config.model == ModelKind.BOTH
        assert config.field.offsets_mT == [0.15]
        assert config.transition.labels[0].F == 5
        assert config.scenario is None

    def test_cce_options(self):
        options = ExperimentConfig().cce_options()
        assert options.max_order == 2
        assert options.pair_cutoff == pytest.approx(0.8e-9)
        assert options.time_grid[0] == 0.0
        assert len(options.time_grid) == 101

    @pytest.mark.parametrize("text", ["paper", "scaled"])
    def test_published_amplitude_names(self, text):
        assert parse_config({"amplitude_mode": text}).amplitude_mode == AmplitudeMode.SCALED

    def test_unknown_amplitude_mode(self):
        with pytest.raises(ConfigError):
            parse_config({"amplitude_mode": "exact"})

    def test_donor_params(self):
        params = ExperimentConfig().donor.to_params()
        assert params.A0 == pytest.approx(2 * np.pi * 1.4754e9)


class TestLoadConfig:
    """Tests for reading TOML files."""

    def test_load(self, tmp_path):
        filepath = tmp_path / "experiment.toml"
        filepath.write_text(MINIMAL_TOML)
        config = load_config(filepath)
        assert config.model == ModelKind.QUANTUM
        assert [seq.name for seq in config.pulse_sequences()] == ["hahn", "cpmg:4"]
        assert config.bath.lattice().cutoff_radius == pytest.approx(2.5e-9)
        np.testing.assert_allclose(config.time_grid.times()[-1], 0.5e-3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        filepath = tmp_path / "broken.toml"
        filepath.write_text("model = \n")
        with pytest.raises(ConfigError):
            load_config(filepath)

    @pytest.mark.parametrize("data", [
        {"n_configurations": 0},
        {"model": "classical"},
        {"sequences": ["cpmg:0"]},
        {"sequences": []},
        {"unknown_key": 1},
        {"field": {"offsets_mT": [], "absolute_mT": []}},
        {"field": {"absolute_mT": [-1.0]}},
        {"bath": {"orientation": "vec:1,2"}},
        {"bath": {"abundance": 1.5}},
        {"bath": {"hyperfine": "table"}},
        {"cce": {"order": 4}},
        {"transition": {"plus": "five"}},
        {"transition": {"ct_search_mT": [120.0, 50.0]}},
        {"time_grid": {"spacing": "log", "t_min_ms": 2.0, "t_max_ms": 1.0}},
        {"scenario": {"kind": "unknown"}},
    ])
    def test_invalid_values(self, data):
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_error_names_the_field(self):
        with pytest.raises(ConfigError, match="cce.order"):
            parse_config({"cce": {"order": 7}})

    def test_missing_hyperfine_table(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config({"bath": {"hyperfine": "table", "table_path": str(tmp_path / "none.csv")}})


class TestTimeGrid:
    def test_log_spacing(self):
        config = parse_config({"time_grid": {"spacing": "log", "t_min_ms": 0.01, "t_max_ms": 10.0, "n_points": 5}})
        np.testing.assert_allclose(config.time_grid.times(), [0.0, 1e-5, 1e-4, 1e-3, 1e-2])

    def test_linear_spacing(self):
        config = parse_config({"time_grid": {"t_max_ms": 1.0, "n_points": 3}})
        np.testing.assert_allclose(config.time_grid.times(), [0.0, 5e-4, 1e-3])


class TestPresets:
    """Tests for the shipped scenario presets."""

    def test_available(self):
        assert available_presets() == ["classicality", "orientation", "spectroscopy"]

    @pytest.mark.parametrize("name", ["classicality", "orientation", "spectroscopy"])
    def test_load(self, name):
        config = load_preset(name)
        assert config.scenario.kind == ScenarioKind(name)

    def test_high_field_transition(self):
        high_field = load_preset("classicality").scenario.high_field
        assert high_field.field_mT == pytest.approx(468.65)
        assert str(high_field.labels[1]) == "|4,-5>"

    def test_unknown(self):
        with pytest.raises(ConfigError, match="available"):
            load_preset("nonexistent")


class TestOverrides:
    """Tests for command-line overrides and the config hash."""

    def test_seed_and_output(self, tmp_path):
        config = with_overrides(ExperimentConfig(), seed=17, out=tmp_path / "run")
        assert config.root_seed == 17
        assert config.output.directory == tmp_path / "run"

    def test_fields(self):
        config = with_overrides(ExperimentConfig(), workers=4, n_configurations=None)
        assert config.workers == 4
        assert config.n_configurations == 20

    def test_section_fields(self):
        config = with_overrides(ExperimentConfig(), bath__cutoff_nm=5.0, bath__orientation="001", cce__order=3)
        assert config.bath.cutoff_nm == 5.0
        assert config.bath.orientation == "001"
        assert config.cce.order == 3
        assert config.bath.abundance == 0.047

    def test_invalid_section_field(self):
        with pytest.raises(ConfigError):
            with_overrides(ExperimentConfig(), bath__abundance=1.5)

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            with_overrides(ExperimentConfig(), workers=0)

    def test_hash_is_stable(self):
        assert config_hash(ExperimentConfig()) == config_hash(parse_config({}))
        assert len(config_hash(ExperimentConfig())) == 64

    def test_hash_changes_with_seed(self):
        assert config_hash(ExperimentConfig()) != config_hash(with_overrides(ExperimentConfig(), seed=1))
