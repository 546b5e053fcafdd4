import copy

import pytest
import yaml

from metaiot.config import build_config, default_config_text, load_config
from metaiot.errors import ConfigError


@pytest.fixture
def raw():
    return yaml.safe_load(default_config_text())


def write(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


class TestDefaults:
    def test_toy_loads(self, toy):
        assert toy.circuit.n_units == 2 == toy.conditions.n_targets == toy.design.dim
        assert toy.conditions.n_conditions == 25
        assert toy.frequency.n_points == 16
        assert toy.conditions.names == ("temperature", "humidity")
        assert toy.mode == "paper" and toy.seed == 0

    def test_file_and_packaged_agree(self, tmp_path, raw, toy):
        assert load_config(write(tmp_path, raw)).config_hash == toy.config_hash

    def test_yaml_round_trip(self, tmp_path, toy):
        path = tmp_path / "copy.yaml"
        path.write_text(toy.to_yaml())
        assert load_config(path).config_hash == toy.config_hash


class TestValidation:
    def test_unknown_top_level_key(self, raw):
        raw["colour"] = "red"
        with pytest.raises(ConfigError, match="colour"):
            build_config(raw)

    @pytest.mark.parametrize("section,key", [("channel", "power_mw"), ("training", "momentum"),
                                             ("sweep", "axis")])
    def test_unknown_section_key(self, raw, section, key):
        raw[section][key] = 1
        with pytest.raises(ConfigError, match=key):
            build_config(raw)

    def test_unknown_material_key(self, raw):
        raw["circuit"]["units"][0]["material"]["beta"] = 1.0
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_target_count_mismatch(self, raw):
        raw["conditions"]["axes"].append({"lower": 0.0, "upper": 1.0, "step": 1.0})
        raw["conditions"]["names"].append("pressure")
        raw["conditions"]["units"].append("kPa")
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_unit_count_mismatch(self, raw):
        raw["design"]["lower_mm"] = [1.0, 1.0, 1.0]
        raw["design"]["upper_mm"] = [5.0, 5.0, 5.0]
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_condition_outside_material_range(self, raw):
        raw["conditions"]["axes"][1] = {"lower": 80.0, "upper": 120.0, "step": 10.0}
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_missing_correction_table(self, tmp_path, raw):
        raw["circuit"]["correction_table"] = "nowhere.csv"
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, raw))

    def test_correction_table_relative_to_config(self, tmp_path, raw):
        (tmp_path / "tables").mkdir()
        (tmp_path / "tables" / "corr.csv").write_text(
            "freq_hz,d_1_mm,d_2_mm,factor\n"
            + "".join(f"{f},{a},{b},1.0\n" for f in ("1e9", "1e10") for a in (1, 5) for b in (1, 5)))
        sub = tmp_path / "cfg"
        sub.mkdir()
        raw["circuit"]["correction_table"] = "../tables/corr.csv"
        cfg = load_config(write(sub, raw))
        assert cfg.circuit.correction is not None

    def test_degenerate_correction_table(self, tmp_path, raw):
        (tmp_path / "corr.csv").write_text("freq_hz,d_1_mm,d_2_mm,factor\n1e9,1,1,1.0\n1e9,5,5,1.0\n")
        raw["circuit"]["correction_table"] = "corr.csv"
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, raw))

    @pytest.mark.parametrize("mode", ["bayes", "", None])
    def test_bad_mode(self, raw, mode):
        raw["mode"] = mode
        with pytest.raises(ConfigError):
            build_config(raw)

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_bad_seed(self, raw, seed):
        raw["seed"] = seed
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_budget_below_seeded_design(self, raw):
        raw["surrogate"]["budget"] = 21
        with pytest.raises(ConfigError):
            build_config(raw)

    @pytest.mark.parametrize("section,key,value", [("channel", "noise_db", -1.0), ("training", "learning_rate", 2.0),
                                                   ("circuit", "topology", "star"), ("frequency", "n_points", 0),
                                                   ("training", "n_meas", 0), ("sweep", "grid_average_cap", 0)])
    def test_bad_values(self, raw, section, key, value):
        raw[section][key] = value
        with pytest.raises(ConfigError):
            build_config(raw)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [1,\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestHashAndOverrides:
    def test_hash_ignores_run_location(self, toy):
        other = toy.with_overrides(workers=4, output_dir="/tmp/elsewhere")
        assert other.config_hash == toy.config_hash
        assert other.workers == 4

    def test_hash_tracks_content(self, toy):
        assert toy.with_overrides(seed=1).config_hash != toy.config_hash
        assert toy.with_overrides(**{"channel.power_w": 0.05}).config_hash != toy.config_hash

    def test_dotted_override(self, toy):
        cfg = toy.with_overrides(**{"channel.distance_m": 1.5, "training.epochs": 10, "mode": "ml"})
        assert cfg.channel.distance_m == 1.5 and cfg.training.epochs == 10 and cfg.mode == "ml"

    def test_none_is_ignored(self, toy):
        assert toy.with_overrides(seed=None).config_hash == toy.config_hash

    def test_override_is_validated(self, toy):
        with pytest.raises(ConfigError):
            toy.with_overrides(mode="bayes")

    def test_override_does_not_mutate(self, toy):
        before = copy.deepcopy(toy.raw)
        toy.with_overrides(seed=5)
        assert toy.raw == before

    def test_yaml_omits_run_location(self, toy):
        text = toy.with_overrides(workers=3, output_dir="x").to_yaml()
        assert "workers" not in text and "output_dir" not in text
