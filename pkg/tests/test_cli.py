import json

import pytest
import yaml

from unitarity_lab.cli import main
from unitarity_lab.config import RunConfig, config_hash, load_config, preset, validate
from unitarity_lab.errors import ConfigurationError


@pytest.mark.parametrize("experiment", ["evolve", "localization", "relocation", "sweep", "limits"])
def test_default_configs_validate(experiment):
    assert validate(RunConfig.from_dict(experiment=experiment)) == []


@pytest.mark.parametrize("experiment", ["born", "oracle"])
def test_stochastic_defaults_need_a_seed(experiment):
    problems = validate(RunConfig.from_dict(experiment=experiment))
    assert len(problems) == 1 and "seed" in problems[0]
    assert validate(RunConfig.from_dict({"seed": 1}, experiment)) == []


def test_white_noise_evolve_needs_a_seed():
    cfg = RunConfig.from_dict({"noise": {"kind": "white_noise"}})
    assert any("seed" in p for p in validate(cfg))


def test_validate_reports_power_of_two(capsys):
    assert main(["validate", "--n-points", "12"]) == 2
    assert "power of two" in capsys.readouterr().out


def test_validate_ok(capsys):
    assert main(["validate"]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_step_bound_violation_is_diagnosed():
    cfg = RunConfig.from_dict({"evolution": {"dt": 1.0}})
    problems = validate(cfg)
    assert len(problems) == 1
    assert "stability bound violated" in problems[0] and "L_max" in problems[0]


def test_all_problems_reported_together():
    cfg = RunConfig.from_dict({"born": {"alpha2": 1.5, "trials": 10, "width": 0.5}}, "born")
    assert len(validate(cfg)) == 4


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown configuration key"):
        RunConfig.from_dict({"grid": {"points": 12}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"seed": -1})


def test_sweep_values_must_be_log_spaced():
    cfg = RunConfig.from_dict({"sweep": {"values": [0.1, 0.2, 0.3, 0.4]}}, "sweep")
    assert any("log-spaced" in p for p in validate(cfg))


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seed": 5, "born": {"alpha2": 0.3}}, "born")
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    back = load_config(path)
    assert back == cfg and config_hash(back) == config_hash(cfg)
    assert config_hash(cfg.with_overrides({"output_dir": "x"})) == config_hash(cfg)
    assert config_hash(cfg.with_overrides({"seed": 6})) != config_hash(cfg)


def test_preset_differs_per_experiment():
    assert preset("evolve")["grid"]["n_points"] == 256
    assert preset("born")["grid"]["n_points"] == 1024


def _run(tmp_path, name, args):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out


def test_oracle_output_is_reproducible(tmp_path):
    args = ["oracle", "--seed", "42", "--trials", "400", "--gain", "0.1", "--alpha2", "0.5"]
    c1, o1 = _run(tmp_path, "a", args)
    c2, o2 = _run(tmp_path, "b", args)
    assert c1 == c2 == 0
    r1 = json.loads((o1 / "result.json").read_text())
    r2 = json.loads((o2 / "result.json").read_text())
    for r in (r1, r2):
        r.pop("created")
        r["config"].pop("output_dir")
    assert r1 == r2
    assert r1["experiment"] == "oracle" and len(r1["config_hash"]) == 12


def test_missing_seed_exits_with_config_error(tmp_path, capsys):
    code, out = _run(tmp_path, "x", ["born"])
    assert code == 2
    assert "seed" in capsys.readouterr().err
    assert not out.exists()


def test_failed_run_writes_nothing(tmp_path, capsys):
    # kappa = 0 never localizes: time limit, exit 3, no files
    code, out = _run(tmp_path, "y", ["localization", "--omega", "0", "--dt", "0.1", "--t-max", "5",
                                     "--n-points", "64", "--set", "grid.origin=-32"])
    assert code in (2, 3)
    assert not out.exists() or not any(out.iterdir())


def test_bad_yaml_is_a_config_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grid: [1, 2\n")
    assert main(["validate", "--config", str(path)]) == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 4


@pytest.mark.slow
def test_default_evolve_run(tmp_path, capsys):
    code, out = _run(tmp_path, "evolve", ["evolve"])
    assert code == 0
    result = json.loads((out / "result.json").read_text())
    assert result["series"]
    for name in result["series"]:
        lines = (out / name).read_text().splitlines()
        assert lines[0].startswith("#")
    assert capsys.readouterr().out.strip()
