import json
import subprocess
import sys

import pytest
import yaml

from fracdens.cli import dispatch

SMALL = {
    "seed": 9,
    "experiment": {
        "H": 0.3, "T_grid": [8.0, 16.0, 32.0], "replicates": 4, "dt": 0.05, "burn_in": 5.0, "chunk": 2,
        "query_points": [[0.0], [0.5]], "bandwidth": {"rule": "basic"},
    },
    "oracle": {"closed_form": "gaussian", "mean": [0.0], "cov": [[0.5]]},
}


def write_cfg(tmp_path, cfg=SMALL, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_rates_json(tmp_path, capsys):
    code = dispatch(["rates", "--H", "0.25", "--beta", "2", "--variant", "improved", "--out", str(tmp_path)])
    assert code == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["a"] == pytest.approx(9 / 44)
    assert rec["mse_exponent"] == pytest.approx(0.8181818, abs=1e-6)
    assert (tmp_path / "rates.manifest.json").exists()


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        dispatch(["frobnicate"])
    assert exc.value.code == 2


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"experiment": {"replicates": 1}})
    assert dispatch(["variance-scaling", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "experiment" in capsys.readouterr().err


def test_invalid_regime_exits_2(tmp_path):
    assert dispatch(["rates", "--H", "0.5", "--beta", "2", "--out", str(tmp_path)]) == 2


def test_kernel_check(tmp_path, capsys):
    assert dispatch(["kernel-check", "--M", "3", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["max_abs_deviation"] < 1e-10


def test_drift_check(tmp_path, capsys):
    assert dispatch(["drift-check", "--drift", "double_well", "--pairs", "2000", "--out", str(tmp_path)]) == 0


def test_simulate_writes_trajectory(tmp_path):
    assert dispatch(["simulate", "--T", "2", "--dt", "0.1", "--seed", "3", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x_1" and len(lines) == 22


def test_manifest_rerun_is_bitwise_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    first, second = tmp_path / "a", tmp_path / "b"
    assert dispatch(["mse-rates", "--config", cfg, "--out", str(first)]) in (0, 1)
    manifest = first / "mse-rates.manifest.json"
    blob = json.loads(manifest.read_text())
    assert blob["base_seed"] == 9
    assert blob["config"]["experiment"]["seed"] == 9
    assert str(first / "mse-rates.csv") in blob["outputs"]
    assert dispatch(["mse-rates", "--config", str(manifest), "--out", str(second)]) in (0, 1)
    assert (first / "mse-rates.csv").read_bytes() == (second / "mse-rates.csv").read_bytes()


def test_threads_do_not_change_csv(tmp_path):
    fixed = dict(SMALL, experiment=dict(SMALL["experiment"], bandwidth=0.4))
    cfg = write_cfg(tmp_path, fixed)
    one, two = tmp_path / "one", tmp_path / "two"
    dispatch(["variance-scaling", "--config", cfg, "--out", str(one), "--threads", "1"])
    dispatch(["variance-scaling", "--config", cfg, "--out", str(two), "--threads", "2"])
    assert (one / "variance-scaling.csv").read_bytes() == (two / "variance-scaling.csv").read_bytes()


def test_seed_flag_overrides(tmp_path):
    cfg = write_cfg(tmp_path)
    dispatch(["mse-rates", "--config", cfg, "--out", str(tmp_path / "a")])
    dispatch(["mse-rates", "--config", cfg, "--seed", "10", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "mse-rates.csv").read_bytes() != (tmp_path / "b" / "mse-rates.csv").read_bytes()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "fracdens", "rates", "--H", "0.75", "--beta", "2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["mse_exponent_with_eps"] == pytest.approx(0.3233333, abs=1e-6)
