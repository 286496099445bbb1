import json
import subprocess
import sys

import numpy as np
import pytest

from tekf.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, load_config, main
from tekf.harness import CSV_COLUMNS, ConfigError, load_results
from tekf.utias import synthetic_dataset


def _summary(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_sim_tt_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    rc = main(["sim-tt", "--trials", "2", "--steps", "15", "--estimator", "tekf1", "--out", str(out)])
    assert rc == EXIT_OK
    assert _summary(capsys)["n_trials"] == 2
    assert load_results(out)["step"].tolist() == list(range(1, 16))
    assert out.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


def test_sim_cl_json_output(tmp_path, capsys):
    out = tmp_path / "r.json"
    rc = main(["sim-cl", "--trials", "1", "--steps", "5", "--robots", "3", "--estimator", "tekf2",
               "--transform", "t1", "--update-mode", "approximate", "--detect-prob", "0.5",
               "--seed", "4", "--out", str(out), "--format", "json"])
    assert rc == EXIT_OK
    doc = json.loads(out.read_text())
    cfg = doc["config"]
    assert (cfg["transformation"], cfg["update_mode"], cfg["master_seed"]) == ("t1", "approximate", 4)
    assert cfg["cl"]["detection_prob"] == 0.5


@pytest.mark.parametrize("argv", [
    ["sim-cl", "--estimator", "dr", "--trials", "1"],
    ["sim-tt", "--transform", "t1", "--trials", "1"],
    ["sim-cl", "--trials", "many"],
    ["sim-cl", "--detect-prob", "1.5", "--trials", "1"],
    ["sim-xx"],
    ["replay-utias"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_config_file_is_overridden_by_flags(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[DEFAULT]\nseed = 3\n\n[sim-tt]\ntrials = 2\nsteps = 7\nestimator = dr\n")
    assert main(["--config", str(ini), "sim-tt", "--steps", "4"]) == EXIT_OK
    s = _summary(capsys)
    assert s["n_trials"] == 2
    opts = load_config(ini, "sim-tt")
    assert opts == {"seed": 3, "trials": 2, "steps": 7, "estimator": "dr"}


def test_config_file_rejects_unknown_keys(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[sim-cl]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        load_config(ini, "sim-cl")
    assert main(["--config", str(ini), "sim-cl"]) == EXIT_CONFIG
    assert main(["--config", str(tmp_path / "absent.ini"), "sim-cl"]) == EXIT_CONFIG


def test_divergence_majority_exits_3(tmp_path, capsys):
    ini = tmp_path / "wild.ini"
    ini.write_text("[sim-cl]\nsigma-v = 5000\ndetect-prob = 0\n")
    rc = main(["--config", str(ini), "sim-cl", "--trials", "3", "--steps", "5", "--robots", "2",
               "--estimator", "ekf"])
    assert rc == EXIT_DIVERGED
    assert _summary(capsys)["n_diverged"] == 3


def test_obs_audit_reports_mismatch(capsys):
    assert main(["obs-audit", "--model", "cl", "--seed", "1", "--estimator", "ekf"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert (rep["dim_nominal"], rep["dim_estimator"], rep["lost_directions"]) == (3, 2, 1)
    assert main(["obs-audit", "--model", "tt", "--schedule", "single", "--estimator", "tekf1"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["dim_nominal"] == rep["dim_estimator"] == 1


def test_replay_utias(tmp_path, capsys):
    synthetic_dataset(tmp_path, robot_count=3, duration=6, seed=0, unknown_barcodes=1)
    out = tmp_path / "replay.json"
    rc = main(["replay-utias", "--data", str(tmp_path), "--robots", "3", "--estimator", "tekf2",
               "--out", str(out)])
    assert rc == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["dropped_measurements"] == 1 and not doc["diverged"]
    assert np.isfinite(doc["rmse_pos"])


def test_replay_malformed_dataset_exits_2(tmp_path, capsys):
    synthetic_dataset(tmp_path, robot_count=2, duration=2)
    with (tmp_path / "Robot1_Odometry.dat").open("a") as fh:
        fh.write("1.0 2.0\n")
    assert main(["replay-utias", "--data", str(tmp_path), "--robots", "2"]) == EXIT_CONFIG
    assert "Robot1_Odometry.dat:" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tekf", "sim-tt", "--trials", "1", "--steps", "3"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["n_trials"] == 1
