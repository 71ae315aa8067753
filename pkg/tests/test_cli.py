from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import GOLDEN
from mdpn.cli import main
from mdpn.model import load_model


def cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_validate_golden(capsys):
    code, out = cli(capsys, "validate", str(GOLDEN / "rotation3.json"))
    assert code == 0 and out.startswith("VALID: 12 states, 5 actions, 3 classes")


def test_validate_builder_writes_model(capsys, tmp_path):
    code, out = cli(capsys, "validate", "--builder", "decoherence-net", "--out", str(tmp_path))
    assert code == 0
    model = load_model((tmp_path / "model.json").read_text())
    assert model.n_states == 8 and model.digest in out
    assert (tmp_path / "report.txt").read_text().splitlines()[0].startswith("VALID")


def test_validate_broken_document(capsys, tmp_path):
    doc = json.loads((GOLDEN / "rotation3.json").read_text())
    doc["kernel"][0]["branches"][0]["p"] = 0.5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, out = cli(capsys, "validate", str(bad))
    assert code == 1 and out.startswith("INVALID")


def test_solve_writes_json(capsys, tmp_path):
    code, out = cli(capsys, "solve", "--builder", "rotation3", "--weights", "1,1,1", "--out", str(tmp_path))
    assert code == 0 and "gain" in out
    doc = json.loads((tmp_path / "solve.json").read_text())
    assert len(doc["policy"]) == 12 and doc["method"] == "rvi"
    code, out_pi = cli(capsys, "solve", "--builder", "rotation3", "--weights", "1,1,1", "--method", "pi")
    gain = lambda text: float(text.splitlines()[1].split()[1])
    assert gain(out_pi) == pytest.approx(gain(out), abs=1e-9)


def test_solve_wrong_weights(capsys):
    code, out = cli(capsys, "solve", "--builder", "rotation3", "--weights", "1,1")
    assert code == 1 and "error" in out


def test_capacity_point(capsys):
    code, out = cli(capsys, "capacity", "--builder", "rotation3", "--lambda", "0.4,0.4,0.4", "--slots-per-unit", "3")
    assert code == 0 and "classification interior" in out
    assert "(0.1 per input unit)" in out


def test_capacity_grid(capsys, tmp_path):
    code, _ = cli(capsys, "capacity", "--builder", "rotation3", "--slots-per-unit", "3",
                  "--lambda", "0,0,0.4", "--grid", "0:1:0:1:3", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "capacity_grid.csv").read_text().splitlines()
    assert lines[0] == "lambda_1,lambda_2,margin,classification" and len(lines) == 10
    assert lines[1].split(",")[3] == "interior" and lines[-1].split(",")[3] == "outside"


def test_simulate_outputs(capsys, tmp_path):
    code, out = cli(capsys, "simulate", "--builder", "rotation3", "--controller", "warp", "--horizon", "20000",
                    "--seeds", "2", "--drift-window", "100", "--epoch-tv", "3", "--out", str(tmp_path))
    assert code == 0
    for seed in (0, 1):
        assert (tmp_path / f"trace_seed{seed}.csv").exists()
        assert json.loads((tmp_path / f"trace_seed{seed}.json").read_text())["seed"] == seed
        drift = np.loadtxt(tmp_path / f"drift_seed{seed}.csv", skiprows=1)
        assert len(drift) == 200
    assert "0,total," in out and "epoch_tv" in out


def test_simulate_unknown_controller(capsys):
    code, out = cli(capsys, "simulate", "--builder", "rotation3", "--controller", "fixed:nope", "--horizon", "10")
    assert code == 1 and "hold_then_r3" in out


def test_fluid_command(capsys, tmp_path):
    code, out = cli(capsys, "fluid", "--builder", "rotation3", "--lambda", "0.4,0.4,0.4", "--slots-per-unit", "3",
                    "--q0", "0.5,0.3,0.8", "--tmax", "60", "--out", str(tmp_path))
    assert code == 0 and out.count("PASS") == 2
    assert (tmp_path / "fluid.csv").read_text().startswith("t,Qbar_1,Qbar_2,Qbar_3,Dbar_1")


def test_reproduce_conditions(capsys):
    code, out = cli(capsys, "reproduce", "appendixC-conditions")
    assert code == 0 and out.startswith("[PASS]")
    assert "5/4 < 4" in out and "23/400 < 1/4" in out and "77/100" in out


def test_reproduce_unknown_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["reproduce", "nope"])
    assert exc.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mdpn", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"


def test_bad_log_level_is_harmless(capsys, monkeypatch):
    monkeypatch.setenv("MDPN_LOG", "chatty")
    code, _ = cli(capsys, "validate", "--builder", "rotation3")
    assert code == 0
