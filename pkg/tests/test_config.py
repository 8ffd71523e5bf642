import json
from pathlib import Path

import numpy as np
import pytest

from refsys.config import (
    ConfigError,
    build_matrix,
    build_vector,
    line_index,
    load_config,
    validate_config,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

GENERIC = {
    "model": "generic",
    "dims": {"r": 2, "e": 1},
    "hamiltonian": {"h_r": {"builder": "pauli_z"}},
    "divisions": [{"label": "z", "kind": "basis"}],
    "initial_state": [[0.6, 0], [0.8, 0]],
    "grid": {"t_max": 1.0, "step": 0.5},
}


def _write(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data, indent=2) if not isinstance(data, str) else data)
    return p


def test_shipped_scenarios_load():
    for path in sorted(SCENARIOS.glob("*.json")):
        sc, text = load_config(str(path))
        assert sc.psi0 is not None and abs(np.linalg.norm(sc.psi0) - 1) < 1e-12, path.name


def test_line_index_tracks_nested_paths():
    text = '{\n  "a": [\n    1,\n    {"b": 2}\n  ],\n  "c": "x"\n}'
    lines = line_index(text)
    assert lines[("a",)] == 2 and lines[("a", 0)] == 3 and lines[("a", 1, "b")] == 4
    assert lines[("c",)] == 6


def test_builders():
    assert np.allclose(build_matrix({"builder": "pauli_x"}), [[0, 1], [1, 0]])
    m = build_matrix({"kron": [{"builder": "identity", "dim": 2}, {"builder": "diag", "values": [1, 2]}]})
    assert np.allclose(m, np.diag([1, 2, 1, 2]))
    assert np.allclose(build_matrix({"scale": 2.0, "of": {"builder": "pauli_z"}}), np.diag([2, -2]))
    assert np.allclose(build_matrix({"sum": [{"builder": "pauli_z"}, {"builder": "identity", "dim": 2}]}),
                       np.diag([2, 0]))
    assert np.allclose(build_vector({"basis": 1, "dim": 3}), [0, 1, 0])
    v = build_vector({"random": 4, "dim": 5})
    assert np.allclose(v, build_vector({"random": 4, "dim": 5}))


def test_schema_errors_carry_line_numbers(tmp_path):
    bad = dict(GENERIC, grid={"t_max": 1.0, "step": -1})
    text = json.dumps(bad, indent=2)
    _, errors = validate_config(text)
    assert errors
    step_line = next(i for i, ln in enumerate(text.splitlines(), 1) if '"step"' in ln)
    assert errors == [f"line {step_line}: grid/step: -1 is less than or equal to the minimum of 0"]


def test_invalid_json_reports_line(tmp_path):
    _, errors = validate_config('{\n  "model": "generic",\n  oops\n}')
    assert errors[0].startswith("line 3: invalid JSON")


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(str(_write(tmp_path, dict(GENERIC, colour="red"))))
    assert any("colour" in e for e in exc.value.errors)


def test_physics_errors_are_aggregated(tmp_path):
    bad = dict(GENERIC)
    bad["hamiltonian"] = {"h_r": [[[0, 0], [1, 0]], [[0, 0], [0, 0]]]}
    bad["divisions"] = [{"label": "z", "kind": "basis"}, {"label": "z", "kind": "basis"}]
    bad["tolerances"] = {"eps_r": 1e-3, "eps_p": 1e-2}
    with pytest.raises(ConfigError) as exc:
        load_config(str(_write(tmp_path, bad)))
    text = "\n".join(exc.value.errors)
    assert "Hermitian" in text
    assert "duplicate division label" in text
    assert "eps_p must equal eps_r" in text
    assert all(e.startswith("line ") for e in exc.value.errors)


def test_unnormalized_amplitudes_rejected(tmp_path):
    cfg = {"model": "measurement", "measurement": {"c": [[1, 0], [1, 0]]}}
    with pytest.raises(ConfigError, match="not normalized"):
        load_config(str(_write(tmp_path, cfg)))


def test_initial_state_dimension_checked(tmp_path):
    with pytest.raises(ConfigError, match="length 3"):
        load_config(str(_write(tmp_path, dict(GENERIC, initial_state=[[1, 0], [0, 0], [0, 0]]))))


def test_unknown_schedule_division(tmp_path):
    cfg = dict(GENERIC, policy="scheduled", schedule=[{"time": 0.5, "division": "nope"}])
    with pytest.raises(ConfigError, match="unknown division label"):
        load_config(str(_write(tmp_path, cfg)))


def test_overrides_apply(tmp_path):
    sc, _ = load_config(str(_write(tmp_path, GENERIC)), {"eps_r": 0.5, "seed": 9, "tau_s": None})
    assert sc.tol.eps_r == 0.5 and sc.seed == 9 and sc.tol.tau_s == 1.0


def test_initial_state_is_normalized(tmp_path):
    sc, _ = load_config(str(_write(tmp_path, dict(GENERIC, initial_state=[[3, 0], [4, 0]]))))
    assert np.allclose(sc.psi0, [0.6, 0.8])


def test_time_reversal_swaps_system(tmp_path):
    sc, _ = load_config(str(SCENARIOS / "two_level_reversed.json"))
    fwd, _ = load_config(str(SCENARIOS / "two_level_forward.json"))
    assert sc.reversed_from == 7.0
    # running the reversed system for 7 refocuses the forward initial vector
    back = sc.system.evolve(sc.psi0, 0.0, 7.0)
    assert np.allclose(back, fwd.psi0, atol=1e-10)
