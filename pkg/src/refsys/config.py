"""Scenario configuration: JSON loading, validation and construction.

Validation runs in two passes. The JSON schema (``schema.json``) checks
structure; the physics pass checks Hermiticity, division completeness,
label references and tolerance consistency. Errors from both passes are
collected and reported together, each tagged with the line of the
offending JSON value. No dynamics is run during validation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import jsonschema
import numpy as np

from .consistency import reversed_system, time_reversed_vector
from .divisions import (
    Division,
    DivisionSet,
    basis_division,
    eigenspace_division,
    explicit_division,
    trivial_division,
)
from .dynamics import PiecewiseSystem, Tolerances, TotalSystem
from .errors import RefsysError, ValidationError
from .linalg import PAULI_X, PAULI_Y, PAULI_Z, random_state, require_hermitian
from .measurement import Interval, MeasurementScheme
from .two_level import TwoLevelScenario, build_env, make_scenario

__all__ = ["ConfigError", "Scenario", "load_schema", "load_config", "validate_config",
           "build_scenario", "line_index", "config_hash"]


class ConfigError(ValidationError):
    """Aggregated configuration errors; ``errors`` holds one message per problem."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def load_schema() -> dict:
    return json.loads(resources.files("refsys").joinpath("schema.json").read_text())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# --- line numbers for JSON paths ---

_WS = " \t\r\n"


def line_index(text: str) -> dict[tuple, int]:
    """Map every JSON path (tuple of keys and indices) to the line where its value starts."""
    decoder = json.JSONDecoder()
    lines: dict[tuple, int] = {}

    def skip(i):
        while i < len(text) and text[i] in _WS:
            i += 1
        return i

    def walk(i, path):
        i = skip(i)
        lines[path] = text.count("\n", 0, i) + 1
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = json.decoder.scanstring(text, skip(i) + 1)
                i = skip(i)  # at ':'
                i = walk(i + 1, path + (key,))
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1  # ','
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = walk(i, path + (k,))
                i = skip(i)
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = decoder.raw_decode(text, i)
        return end

    walk(0, ())
    return lines


def _where(lines: dict, path) -> str:
    path = tuple(path)
    while path not in lines and path:
        path = path[:-1]
    ref = "/".join(str(p) for p in tuple(path)) or "<root>"
    return f"line {lines.get(path, 1)}: {ref}"


# --- builders ---

class _Collector:
    def __init__(self, lines: dict):
        self.lines = lines
        self.errors: list[str] = []

    def add(self, path, msg: str) -> None:
        self.errors.append(f"{_where(self.lines, path)}: {msg}")

    def guard(self, path, fn, *args):
        """Run ``fn``; record library errors against ``path`` and return ``None``."""
        try:
            return fn(*args)
        except (RefsysError, ValueError, KeyError, IndexError) as exc:
            self.add(path, str(exc).strip("'\""))
            return None


def _complex_array(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def build_matrix(spec) -> np.ndarray:
    if isinstance(spec, list):
        m = _complex_array(spec)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"matrix is not square (shape {m.shape})")
        return m
    if "kron" in spec:
        out = build_matrix(spec["kron"][0])
        for s in spec["kron"][1:]:
            out = np.kron(out, build_matrix(s))
        return out
    if "sum" in spec:
        parts = [build_matrix(s) for s in spec["sum"]]
        if len({p.shape for p in parts}) != 1:
            raise ValidationError("summands differ in shape")
        return sum(parts)
    if "scale" in spec:
        return float(spec["scale"]) * build_matrix(spec["of"])
    kind = spec["builder"]
    fixed = {"pauli_x": PAULI_X, "pauli_y": PAULI_Y, "pauli_z": PAULI_Z}
    if kind in fixed:
        return fixed[kind].copy()
    if kind == "diag":
        if "values" not in spec:
            raise ValidationError("diag builder needs 'values'")
        return np.diag(np.asarray(spec["values"], dtype=complex))
    if "dim" not in spec:
        raise ValidationError(f"builder {kind!r} needs 'dim'")
    dim = int(spec["dim"])
    if kind == "zero":
        return np.zeros((dim, dim), dtype=complex)
    if kind == "identity":
        return np.eye(dim, dtype=complex)
    return build_env(kind, dim, float(spec.get("strength", 1.0)), int(spec.get("seed", 0)))


def build_vector(spec) -> np.ndarray:
    if isinstance(spec, list):
        return _complex_array(spec).reshape(-1)
    if "kron" in spec:
        out = build_vector(spec["kron"][0])
        for s in spec["kron"][1:]:
            out = np.kron(out, build_vector(s))
        return out
    dim = int(spec["dim"])
    if "random" in spec:
        return random_state(np.random.default_rng(int(spec["random"])), dim)
    if spec["basis"] >= dim:
        raise ValidationError(f"basis index {spec['basis']} out of range for dim {dim}")
    v = np.zeros(dim, dtype=complex)
    v[int(spec["basis"])] = 1.0
    return v


def _build_division(spec: dict, dim_r: int) -> Division:
    label, kind = spec["label"], spec["kind"]
    if kind == "basis":
        return basis_division(label, dim_r, spec.get("groups"), spec.get("labels"))
    if kind == "explicit":
        if "projectors" not in spec:
            raise ValidationError("explicit division needs 'projectors'")
        return explicit_division(label, {mu: build_matrix(m) for mu, m in spec["projectors"].items()})
    if "operator" not in spec:
        raise ValidationError("eigen division needs 'operator'")
    return eigenspace_division(label, build_matrix(spec["operator"]), spec.get("groups"),
                               spec.get("labels"))


@dataclass
class Scenario:
    """Everything a subcommand needs, built from a validated config."""

    name: str
    model: str
    system: Any
    divisions: DivisionSet
    psi0: np.ndarray
    tol: Tolerances
    grid: np.ndarray
    policy: str = "greedy"
    schedule: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    seed: int = 0
    n_seeds: int = 1
    assertions: dict = field(default_factory=dict)
    two_level: TwoLevelScenario | None = None
    scheme: MeasurementScheme | None = None
    amplitudes: np.ndarray | None = None
    fidelity: dict | None = None
    t0: float = 0.0
    reversed_from: float | None = None

    def division(self, label: str) -> Division:
        return self.divisions.get(label)


def _grid(spec: dict) -> np.ndarray:
    if "times" in spec:
        g = np.asarray(spec["times"], dtype=float)
    else:
        t0 = float(spec.get("t0", 0.0))
        n = int(np.floor((spec["t_max"] - t0) / spec["step"] + 1e-9))
        g = t0 + spec["step"] * np.arange(n + 1)
    if g.size == 0 or np.any(np.diff(g) <= 0):
        raise ValidationError("grid times must be strictly increasing")
    return g


def _system_generic(data, col: _Collector):
    dims = data.get("dims")
    if dims is None:
        col.add(("model",), "generic model needs 'dims'")
        return None
    dim_r, dim_e = dims["r"], dims["e"]
    ham = data.get("hamiltonian", {})

    def piece(spec, path):
        mats = {}
        for name, dim in (("h_r", dim_r), ("h_e", dim_e), ("h_i", dim_r * dim_e)):
            if name not in spec:
                continue
            m = col.guard(path + (name,), build_matrix, spec[name])
            if m is None:
                continue
            if m.shape[0] != dim:
                col.add(path + (name,), f"{name} has dim {m.shape[0]}, expected {dim}")
                continue
            if col.guard(path + (name,), require_hermitian, m, 1e-10, name) is None:
                continue
            mats[name] = m
        return col.guard(path, lambda: TotalSystem(dim_r, dim_e, **mats))

    if "pieces" in ham:
        pieces, bps = [], []
        for k, spec in enumerate(ham["pieces"]):
            pieces.append(piece(spec, ("hamiltonian", "pieces", k)))
            if k < len(ham["pieces"]) - 1:
                if "until" not in spec:
                    col.add(("hamiltonian", "pieces", k), "every piece but the last needs 'until'")
                else:
                    bps.append(float(spec["until"]))
        if any(p is None for p in pieces) or len(bps) != len(pieces) - 1:
            return None
        return col.guard(("hamiltonian", "pieces"), lambda: PiecewiseSystem(tuple(pieces), tuple(bps)))
    return piece(ham, ("hamiltonian",))


def build_scenario(data: dict, text: str | None = None, overrides: dict | None = None) -> Scenario:
    """Validate a schema-conforming config physically and build the scenario.

    Raises
    ------
    ConfigError
        With every problem found.
    """
    lines = line_index(text) if text is not None else {}
    col = _Collector(lines)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    model = data["model"]
    two, scheme, amps = None, None, None
    psi0 = None
    default_divs: list[Division] = []

    if model == "two_level":
        spec = dict(data.get("two_level", {}))
        if not spec:
            col.add(("model",), "two_level model needs a 'two_level' block")
        else:
            two = col.guard(("two_level",), lambda: make_scenario(
                spec["dim_e"], spec.get("seed", 0), spec.get("env", "gue"),
                spec.get("env_strength", 1.0), spec.get("coupling", 1.0),
                spec.get("energies", (0.0, 1.0)), spec.get("windows", ((0.0, 10.0), (12.0, 22.0))),
                spec.get("g", 0.5), spec.get("off", "identity")))
        system = two.system() if two is not None else None
        if two is not None:
            default_divs = [two.division]
            r = col.guard(("two_level", "r"), build_vector, spec.get("r", [[1, 0], [1, 0]]))
            if r is not None and r.size != 2:
                col.add(("two_level", "r"), "r must have 2 amplitudes")
            elif r is not None:
                phi0 = random_state(np.random.default_rng(spec.get("phi_seed", 0)), two.dim_e)
                psi0 = two.initial_state(r / np.linalg.norm(r), phi0)
    elif model == "measurement":
        spec = data.get("measurement", {})
        if not spec:
            col.add(("model",), "measurement model needs a 'measurement' block")
            system = None
        else:
            amps = _complex_array(spec["c"])
            if abs(np.vdot(amps, amps).real - 1.0) > 1e-10:
                col.add(("measurement", "c"), "amplitudes are not normalized (sum |c_a|^2 != 1)")
            basis = spec.get("basis")
            scheme = col.guard(("measurement",), lambda: MeasurementScheme(
                amps.size, None if basis is None else _complex_array(basis), spec.get("dim_b", 1),
                spec.get("kind", "unitary"), spec.get("g", 1.0), spec.get("t_on", 0.0)))
            system = scheme.system() if scheme is not None else None
            if scheme is not None:
                default_divs = [scheme.pointer_division]
                if not col.errors:
                    psi0 = scheme.initial_state(amps)
    else:
        system = _system_generic(data, col)

    dim_r = system.dim_r if system is not None else (data.get("dims") or {}).get("r", 1)
    divs = list(default_divs)
    for k, spec in enumerate(data.get("divisions", [])):
        d = col.guard(("divisions", k), _build_division, spec, dim_r)
        if d is not None:
            if d.dim_r != dim_r:
                col.add(("divisions", k), f"division acts on dim {d.dim_r}, reference system has {dim_r}")
            elif d.label in [x.label for x in divs]:
                col.add(("divisions", k, "label"), f"duplicate division label {d.label!r}")
            else:
                divs.append(d)
    dset = col.guard(("divisions",), lambda: DivisionSet(tuple(divs or [trivial_division(dim_r)])))

    if "initial_state" in data:
        psi0 = col.guard(("initial_state",), build_vector, data["initial_state"])
    if psi0 is None and system is not None and not col.errors:
        col.add(("initial_state",), "no initial state given")
    if psi0 is not None and system is not None:
        if psi0.size != system.dim:
            col.add(("initial_state",), f"initial state has length {psi0.size}, system dim is {system.dim}")
            psi0 = None
        elif np.linalg.norm(psi0) == 0:
            col.add(("initial_state",), "initial state has zero norm")
            psi0 = None
        else:
            psi0 = psi0 / np.linalg.norm(psi0)

    tspec = dict(data.get("tolerances", {}))
    for key in ("eps_r", "eps_d", "tau_s"):
        if key in overrides:
            tspec[key] = overrides[key]
    if "eps_p" in tspec and abs(tspec["eps_p"] - tspec.get("eps_r", Tolerances.eps_r)) > 0:
        col.add(("tolerances", "eps_p"), "eps_p must equal eps_r")
    tspec.pop("eps_p", None)
    tol = col.guard(("tolerances",), lambda: Tolerances(**tspec))

    grid = None
    if "grid" in data:
        grid = col.guard(("grid",), _grid, data["grid"])
    elif scheme is not None:
        grid = np.array([scheme.t_on, scheme.t_off, scheme.t_off + 1.0])
    elif two is not None:
        (t0, _), (t1, t1e) = two.windows
        grid = np.array([t0, t1, 0.5 * (t1 + t1e)])
    else:
        col.add(("grid",), "no time grid given")

    labels = set(dset.labels) if dset is not None else set()
    schedule = []
    for k, item in enumerate(data.get("schedule", [])):
        if item["division"] not in labels:
            col.add(("schedule", k, "division"), f"unknown division label {item['division']!r}")
            continue
        d = dset.get(item["division"])
        bad = [v for v in item.get("values", []) if v not in d.labels]
        if bad:
            col.add(("schedule", k, "values"), f"values {bad} not in division {d.label!r}")
            continue
        entry = (float(item["time"]), d) + ((tuple(item["values"]),) if "values" in item else ())
        schedule.append(entry)
    policy = data.get("policy", "greedy")
    if policy == "scheduled" and not data.get("schedule"):
        col.add(("policy",), "scheduled policy needs a non-empty 'schedule'")

    intervals = []
    for k, item in enumerate(data.get("intervals", [])):
        if item["division"] not in labels:
            col.add(("intervals", k, "division"), f"unknown division label {item['division']!r}")
            continue
        iv = col.guard(("intervals", k), lambda: Interval(float(item["start"]), float(item["stop"]),
                                                          dset.get(item["division"])))
        if iv is not None:
            intervals.append(iv)
    if scheme is not None and not data.get("intervals"):
        intervals = [Interval(scheme.t_off, scheme.t_off + 1.0, scheme.pointer_division)]
    for k, (a, b) in enumerate(zip(intervals, intervals[1:])):
        if b.start < a.stop:
            col.add(("intervals", k + 1), "intervals must be ordered and non-overlapping")

    fid = None
    if two is not None and "fidelity" not in data:
        data = {**data, "fidelity": {}}
    if "fidelity" in data:
        fspec = data["fidelity"]
        fid = {"factor": float(fspec.get("factor", 10.0))}
        for key in ("h0", "h"):
            if key in fspec:
                m = col.guard(("fidelity", key), build_matrix, fspec[key])
                if m is not None and col.guard(("fidelity", key), require_hermitian, m, 1e-10, key) is not None:
                    fid[key] = m
        if "psi0" in fspec:
            fid["psi0"] = col.guard(("fidelity", "psi0"), build_vector, fspec["psi0"])
        if "grid" in fspec:
            fid["grid"] = col.guard(("fidelity", "grid"), _grid, fspec["grid"])
        if two is not None:
            fid.setdefault("h0", two.h_e + two.h_ie[0])
            fid.setdefault("h", two.h_e + two.h_ie[1])
            if "psi0" not in fid:
                seed_phi = data.get("two_level", {}).get("phi_seed", 0)
                fid["psi0"] = random_state(np.random.default_rng(seed_phi), two.dim_e)
        if two is None and not ("h0" in fid and "h" in fid and "psi0" in fid):
            col.add(("fidelity",), "fidelity outside the two_level model needs h0, h and psi0")
        if "h0" in fid and "h" in fid and fid["h0"].shape != fid["h"].shape:
            col.add(("fidelity", "h"), "h0 and h differ in dimension")

    reversed_from = None
    t0 = float(grid[0]) if grid is not None else 0.0
    if "time_reversal" in data and system is not None and psi0 is not None and not col.errors:
        spec = data["time_reversal"]
        check = spec.get("check_division")
        div = None
        if check is not None:
            if check not in labels:
                col.add(("time_reversal", "check_division"), f"unknown division label {check!r}")
            else:
                div = dset.get(check)
        if not col.errors:
            start = float(spec.get("t0", 0.0))
            psi0 = col.guard(("time_reversal",), time_reversed_vector, system, psi0, start,
                             float(spec["t"]), div)
            system = reversed_system(system, float(spec["t"]))
            reversed_from = float(spec["t"])

    seed = int(overrides.get("seed", data.get("seed", 0)))
    if col.errors:
        raise ConfigError(col.errors)
    return Scenario(
        name=data.get("name", "scenario"), model=model, system=system, divisions=dset, psi0=psi0,
        tol=tol, grid=grid, policy=policy, schedule=schedule, intervals=intervals, seed=seed,
        n_seeds=int(data.get("n_seeds", 1)), assertions=dict(data.get("assert", {})),
        two_level=two, scheme=scheme, amplitudes=amps, fidelity=fid, t0=t0,
        reversed_from=reversed_from)


def validate_config(text: str) -> tuple[dict | None, list[str]]:
    """Schema pass on raw JSON text; returns the parsed data and line-tagged errors."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [f"line {exc.lineno}: invalid JSON: {exc.msg}"]
    lines = line_index(text)
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = []
    for err in sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path]):
        # oneOf failures are reported against their best-matching branch
        best = jsonschema.exceptions.best_match([err])
        errors.append(f"{_where(lines, best.absolute_path)}: {best.message}")
    return data, errors


def load_config(path: str, overrides: dict | None = None) -> tuple[Scenario, str]:
    """Read, validate and build; returns the scenario and the raw text.

    Raises
    ------
    ConfigError
        On unreadable files, schema violations or physics violations.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from None
    data, errors = validate_config(text)
    if errors:
        raise ConfigError(errors)
    return build_scenario(data, text, overrides), text
