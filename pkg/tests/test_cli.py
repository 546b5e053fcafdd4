import json

import numpy as np
import pytest
import yaml

from metaiot.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from metaiot.config import default_config_text
from metaiot.sensefn import SensingModel


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    raw = yaml.safe_load(default_config_text())
    raw["training"]["epochs"] = 100
    raw["sweep"].update(power_w=[0.01, 0.1], grid_average_cap=2)
    path = tmp_path_factory.mktemp("cfg") / "fast.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


class TestStepwise:
    def test_optimize_generate_train_evaluate(self, capsys, fast_config, tmp_path):
        common = ("--config", str(fast_config), "--out", str(tmp_path))
        code, io = run(capsys, "optimize-structure", *common)
        assert code == EXIT_OK
        assert json.loads(io.out)["d_star_mm"] == json.loads((tmp_path / "structure.json").read_text())["d_star_mm"]
        assert run(capsys, "gen-dataset", *common)[0] == EXIT_OK
        assert run(capsys, "gen-dataset", *common, "--split", "test")[0] == EXIT_OK
        assert (tmp_path / "train.csv").is_file() and (tmp_path / "test.csv").is_file()
        code, io = run(capsys, "train", *common)
        assert code == EXIT_OK and (tmp_path / "model.json").is_file()
        code, io = run(capsys, "evaluate", *common, "--model", str(tmp_path / "model.json"), "--dataset",
                       str(tmp_path / "test.csv"))
        assert code == EXIT_OK and json.loads(io.out)["rmse"] > 0

    def test_explicit_structure(self, capsys, fast_config, tmp_path):
        code, _ = run(capsys, "gen-dataset", "--config", str(fast_config), "--out", str(tmp_path), "--structure",
                      "2,4")
        assert code == EXIT_OK
        assert json.loads(
            next(line for line in (tmp_path / "train.csv").read_text().splitlines() if "structure_mm" in line)
            .split(": ", 1)[1]) == [2.0, 4.0]


class TestCodesignAndInfer:
    def test_codesign_evaluate_infer(self, capsys, fast_config, tmp_path):
        code, io = run(capsys, "codesign", "--config", str(fast_config), "--out", str(tmp_path))
        assert code == EXIT_OK
        summary = json.loads(io.out)
        code, io = run(capsys, "evaluate", "--config", str(fast_config), "--out", str(tmp_path))
        assert code == EXIT_OK
        assert abs(json.loads(io.out)["test_rmse"] - summary["test_rmse"]) <= 1e-12

        spectrum = ",".join(["-40"] * 16)
        code, io = run(capsys, "infer", "--model", str(tmp_path / "model.json"), f"--power={spectrum}")
        assert code == EXIT_OK
        line = io.out.strip()
        assert line.startswith("temperature=") and "degC" in line and "humidity=" in line and "%RH" in line

        code, io = run(capsys, "infer", "--model", str(tmp_path / "model.json"), "--input",
                       str(tmp_path / "test.csv"))
        assert code == EXIT_OK and len(io.out.strip().splitlines()) == 250

    def test_sweep(self, capsys, fast_config, tmp_path):
        code, _ = run(capsys, "sweep", "--config", str(fast_config), "--out", str(tmp_path), "--axis", "power",
                      "--no-plot")
        assert code == EXIT_OK
        assert (tmp_path / "sweep_power.csv").is_file() and not (tmp_path / "sweep_power.gp").exists()


class TestExitCodes:
    def test_unknown_config_key(self, capsys, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: 0\nflavour: x\n")
        code, io = run(capsys, "optimize-structure", "--config", str(bad), "--out", str(tmp_path))
        assert code == EXIT_CONFIG and "config error" in io.err

    def test_missing_dataset(self, capsys, fast_config, tmp_path):
        code, _ = run(capsys, "train", "--config", str(fast_config), "--out", str(tmp_path))
        assert code == EXIT_CONFIG

    def test_infeasible_structure(self, capsys, fast_config, tmp_path):
        code, _ = run(capsys, "gen-dataset", "--config", str(fast_config), "--out", str(tmp_path), "--structure",
                      "3,3")
        assert code == EXIT_CONFIG

    def test_evaluate_needs_both(self, capsys, fast_config, tmp_path):
        code, _ = run(capsys, "evaluate", "--config", str(fast_config), "--out", str(tmp_path), "--model", "m.json")
        assert code == EXIT_CONFIG

    def test_wrong_spectrum_width(self, capsys, tmp_path):
        SensingModel(np.zeros((2, 16)), np.zeros(2), np.zeros((2, 2)), np.zeros(2)).save(tmp_path / "m.json")
        code, io = run(capsys, "infer", "--model", str(tmp_path / "m.json"), "--power=-40,-41")
        assert code == EXIT_FAILURE and "error" in io.err

    def test_malformed_model(self, capsys, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        code, _ = run(capsys, "infer", "--model", str(tmp_path / "m.json"), "--power=-40")
        assert code == EXIT_CONFIG

    def test_geometry_error_is_failure(self, capsys, fast_config, tmp_path):
        raw = yaml.safe_load(fast_config.read_text())
        raw["sweep"]["distance_m"] = [0.3]
        path = tmp_path / "near.yaml"
        path.write_text(yaml.safe_dump(raw))
        code, io = run(capsys, "sweep", "--config", str(path), "--out", str(tmp_path), "--axis", "distance")
        assert code == EXIT_FAILURE and "sweep-distance" in io.err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["sweep"])
        assert info.value.code == 2
