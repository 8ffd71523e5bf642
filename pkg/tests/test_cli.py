import json
import subprocess
import sys
from pathlib import Path

import pytest

from refsys.cli import run

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = run([*args, "--out-dir", str(out)])
    return code, out


def test_validate_ok_and_bad(tmp_path, capsys):
    assert run(["validate", "--config", str(SCENARIOS / "free_product.json")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "model": "generic",\n  "grid": {"step": 1}\n}\n')
    assert run(["validate", "--config", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "config error: line 3" in err


def test_missing_file_is_config_error(tmp_path):
    assert run(["validate", "--config", str(tmp_path / "none.json")]) == 1


@pytest.mark.parametrize("command", ["evolve", "branch", "check-consistency", "entropy",
                                     "allowed-region"])
def test_generic_subcommands_write_outputs(tmp_path, command):
    code, out = _run(tmp_path, command, "--config", str(SCENARIOS / "piecewise_scheduled.json"))
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == command and manifest["exit_code"] == 0
    assert set(manifest["artifacts"]) >= {f"{command}.json"}
    for name in manifest["artifacts"]:
        assert (out / name).exists()


def test_born_and_trajectory(tmp_path):
    code, out = _run(tmp_path, "born", "--config", str(SCENARIOS / "born_two_outcomes.json"))
    assert code == 0
    rows = (out / "born.csv").read_text().splitlines()
    assert rows[0] == "outcome,value,probability"
    code, out = _run(tmp_path, "trajectory", "--config", str(SCENARIOS / "born_two_outcomes.json"),
                     name="traj")
    assert code == 0


def test_born_needs_measurement_model(tmp_path):
    code, _ = _run(tmp_path, "born", "--config", str(SCENARIOS / "free_product.json"))
    assert code == 1


def test_fidelity_two_level(tmp_path):
    code, out = _run(tmp_path, "fidelity", "--config", str(SCENARIOS / "two_level_forward.json"))
    assert code == 0
    assert (out / "fidelity.csv").read_text().startswith("time,M")


def test_assertions_map_to_exit_codes(tmp_path):
    fwd, _ = _run(tmp_path, "allowed-region", "--config", str(SCENARIOS / "two_level_forward.json"))
    rev, out = _run(tmp_path, "allowed-region", "--config", str(SCENARIOS / "two_level_reversed.json"),
                    name="rev")
    assert fwd == 0 and rev == 0
    summary = json.loads((out / "allowed-region.json").read_text())
    assert summary["passed"] is False
    # flipping the expectation turns the same verdict into exit code 2
    cfg = json.loads((SCENARIOS / "two_level_reversed.json").read_text())
    cfg["assert"]["allowed_region"] = "pass"
    p = tmp_path / "flip.json"
    p.write_text(json.dumps(cfg))
    code, _ = _run(tmp_path, "allowed-region", "--config", str(p), name="flip")
    assert code == 2


def test_invalid_split_request_is_config_error(tmp_path):
    cfg = json.loads((SCENARIOS / "piecewise_scheduled.json").read_text())
    # during the pulse the pointer division is not stable
    cfg["schedule"] = [{"time": 1.2, "division": "pointer", "values": ["up"]}]
    cfg["initial_state"] = [[0.6, 0], [0, 0], [0.8, 0], [0, 0]]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    code, _ = _run(tmp_path, "branch", "--config", str(p))
    assert code == 1


def test_outputs_are_byte_identical(tmp_path):
    cfg = str(SCENARIOS / "piecewise_scheduled.json")
    for command in ("branch", "trajectory", "entropy"):
        _, a = _run(tmp_path, command, "--config", cfg, name=f"{command}-a")
        _, b = _run(tmp_path, command, "--config", cfg, name=f"{command}-b")
        names = sorted(x.name for x in a.iterdir())
        assert names == sorted(x.name for x in b.iterdir())
        for n in names:
            assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_override_recorded(tmp_path):
    _, out = _run(tmp_path, "trajectory", "--config", str(SCENARIOS / "piecewise_scheduled.json"),
                  "--seed", "5", "--eps-r", "1e-5")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["overrides"] == {"seed": 5, "eps_r": 1e-5}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "refsys", "validate", "--config",
                           str(SCENARIOS / "free_product.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("REFSYS_OUT_DIR", str(tmp_path / "envout"))
    assert run(["evolve", "--config", str(SCENARIOS / "free_product.json")]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()
