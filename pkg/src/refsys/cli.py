"""Command-line entry point: ``refsys <subcommand> --config FILE``.

Each run writes ``<subcommand>.json`` (summary), one or more CSV series
and ``manifest.json`` (config hash, code version, seed and artifact
hashes) into the output directory. Exit codes: 0 success, 1 configuration
error, 2 a physics verdict contradicting the scenario's ``assert`` block.

CSV columns per subcommand:

* ``evolve``: time, norm, one ``P[div:value]`` column per non-trivial division value
* ``branch``: time, path, probability (long format)
* ``check-consistency``: time, division, status, max_offdiag; ``decoherence.csv`` has
  value, path, path_prime, re, im at the last grid time
* ``entropy``: time, S_tree, S_max, split
* ``born``: outcome, value, probability
* ``trajectory``: start, stop, division, value, probability
* ``fidelity``: time, M
* ``allowed-region``: tree, leaves, splits, truncated
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .branching import grow_tree, tree_to_dict
from .config import ConfigError, config_hash, load_config
from .consistency import allowed_region_test, check_principle, decoherence_matrix
from .dynamics import lifted_for
from .entropy import max_entropy_series
from .errors import ContractViolation, RefsysError
from .measurement import enumerate_fr_outcomes, run_fr_trajectory, run_measurement, sample_fr_outcomes
from .two_level import peres_fidelity, tau_policy

OUT_ENV = "REFSYS_OUT_DIR"
DEFAULT_OUT = "refsys-out"

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT = 0, 1, 2


def _clean(obj):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.12g}") if np.isfinite(x) else None
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x: float) -> str:
    return f"{x:.12g}"


def _nontrivial(sc):
    return [lifted_for(d, sc.system) for d in sc.divisions.nontrivial]


def _grow(sc, on_step=None):
    return grow_tree(sc.system, sc.psi0, sc.grid, _nontrivial(sc), sc.tol, sc.policy,
                     sc.schedule, on_step=on_step)


# --- subcommands; each returns (summary, {filename: text}, exit code) ---

def cmd_evolve(sc):
    states = sc.system.evolve_many(sc.psi0, sc.grid[0], sc.grid)
    divs = _nontrivial(sc)
    header = ["time", "norm"] + [f"P[{d.label}:{mu}]" for d in divs for mu in d.labels]
    rows = []
    for t, psi in zip(sc.grid, states):
        row = [_g(t), _g(np.linalg.norm(psi))]
        row += [_g(d.weight(mu, psi)) for d in divs for mu in d.labels]
        rows.append(row)
    final = {f"{d.label}:{mu}": d.weight(mu, states[-1]) for d in divs for mu in d.labels}
    norm_err = float(np.max(np.abs(np.linalg.norm(states, axis=1) - 1.0)))
    summary = {"final_time": sc.grid[-1], "final_probabilities": final, "max_norm_error": norm_err}
    return summary, {"evolve.csv": _csv(header, rows)}, EXIT_OK


def cmd_branch(sc):
    run = _grow(sc)
    total = run.tree.total_vector()
    exact = sc.system.evolve(sc.psi0, sc.grid[0], run.tree.t)
    summary = tree_to_dict(run.tree, run.policy)
    summary["branch_sum_error"] = float(np.linalg.norm(total - exact))
    summary["total_probability"] = float(run.tree.probabilities().sum())
    return summary, {"branch.csv": run.probability_csv()}, EXIT_OK


def _assertion(sc, key, failed: bool) -> int:
    want = sc.assertions.get(key)
    if want is None:
        return EXIT_OK
    return EXIT_OK if (want == "fail") == failed else EXIT_VERDICT


def cmd_check_consistency(sc):
    divs = [lifted_for(d, sc.system) for d in sc.divisions]
    verdicts = []

    def on_step(tree):
        for d in divs:
            verdicts.append(check_principle(tree, d, None, tol=sc.tol))
        return False

    run = _grow(sc, on_step)
    rows = [[_g(v.time), v.division, v.status, _g(v.max_offdiag)] for v in verdicts]
    failed = [v for v in verdicts if v.status == "fail"]
    files = {"check-consistency.csv": _csv(["time", "division", "status", "max_offdiag"], rows)}
    dm_text = ""
    for d in divs:
        dm = decoherence_matrix(run.tree, d)
        dm_text += dm.to_csv() if not dm_text else dm.to_csv().split("\n", 1)[1]
    files["decoherence.csv"] = dm_text
    summary = {
        "n_checks": len(verdicts),
        "n_pass": sum(v.status == "pass" for v in verdicts),
        "n_fail": len(failed),
        "n_not_applicable": sum(v.status == "not-applicable" for v in verdicts),
        "max_offdiag": max((v.max_offdiag for v in verdicts), default=0.0),
        "first_failure": failed[0].as_dict() if failed else None,
        "leaves": len(run.tree),
        "eps_d": sc.tol.eps_d,
        "assert": sc.assertions.get("consistency"),
    }
    return summary, files, _assertion(sc, "consistency", bool(failed))


def cmd_entropy(sc):
    series = max_entropy_series(sc.system, sc.psi0, sc.divisions, sc.grid, sc.tol)
    summary = series.as_dict()
    summary.update({"final_S_tree": series.s_tree[-1], "final_S_max": series.s_max[-1],
                    "n_split_times": int(series.split.sum()),
                    "min_jump": float(series.jumps().min()),
                    "max_drift": float(np.max(np.abs(series.drift()), initial=0.0))})
    return summary, {"entropy.csv": series.to_csv()}, EXIT_OK


def _require_scheme(sc):
    if sc.scheme is None:
        raise ConfigError(["line 1: model: this subcommand needs the measurement model"])


def cmd_born(sc):
    _require_scheme(sc)
    res = run_measurement(sc.scheme, sc.amplitudes, tol=sc.tol)
    summary = res.as_dict()
    summary["probabilities"] = {str(a): p for a, p in res.probabilities.items()}
    summary["expected"] = {str(a): float(abs(c) ** 2) for a, c in enumerate(sc.amplitudes)}
    if sc.n_seeds > 1:
        counts = sample_fr_outcomes(sc.system, sc.intervals, sc.psi0,
                                    range(sc.seed, sc.seed + sc.n_seeds), sc.scheme.t_on, sc.tol)
        summary["sampled"] = {"seeds": [sc.seed, sc.seed + sc.n_seeds - 1],
                              "frequencies": {"|".join(k): n / sc.n_seeds
                                              for k, n in sorted(counts.items())}}
    return summary, {"born.csv": res.to_csv()}, EXIT_OK


def cmd_trajectory(sc):
    if not sc.intervals:
        raise ConfigError(["line 1: intervals: trajectory needs at least one interval"])
    t0 = sc.scheme.t_on if sc.scheme is not None else sc.t0
    traj = run_fr_trajectory(sc.system, sc.intervals, sc.psi0, sc.seed, t0, sc.tol)
    summary = traj.as_dict()
    exact = enumerate_fr_outcomes(sc.system, sc.intervals, sc.psi0, t0, sc.tol)
    summary["exact"] = {"|".join(k): p for k, p in sorted(exact.items())}
    if sc.n_seeds > 1:
        counts = sample_fr_outcomes(sc.system, sc.intervals, sc.psi0,
                                    range(sc.seed, sc.seed + sc.n_seeds), t0, sc.tol)
        summary["sampled"] = {"|".join(k): n / sc.n_seeds for k, n in sorted(counts.items())}
    rows = [[_g(r.start), _g(r.stop), r.division, r.value, _g(r.probability)] for r in traj.records]
    return summary, {"trajectory.csv": _csv(["start", "stop", "division", "value", "probability"],
                                            rows)}, EXIT_OK


def cmd_fidelity(sc):
    if not sc.fidelity:
        raise ConfigError(["line 1: fidelity: no fidelity block and no two_level model"])
    grid = sc.fidelity.get("grid")
    grid = sc.grid if grid is None else grid
    fit = peres_fidelity(sc.fidelity["h0"], sc.fidelity["h"], sc.fidelity["psi0"], grid)
    summary = fit.as_dict()
    summary["tau_s"] = tau_policy(fit, sc.fidelity["factor"]) if fit.decayed else None
    summary["factor"] = sc.fidelity["factor"]
    return summary, {"fidelity.csv": fit.to_csv()}, EXIT_OK


def cmd_allowed_region(sc):
    schedule = sc.schedule if sc.policy == "scheduled" else ()
    res = allowed_region_test(sc.system, sc.psi0, sc.divisions, sc.grid, sc.tol, schedule)
    summary = res.as_dict()
    summary["assert"] = sc.assertions.get("allowed_region")
    rows = [[name, t["leaves"], t["splits"], int(t["truncated"])] for name, t in res.trees.items()]
    files = {"allowed-region.csv": _csv(["tree", "leaves", "splits", "truncated"], rows)}
    return summary, files, _assertion(sc, "allowed_region", not res.passed)


COMMANDS = {
    "evolve": cmd_evolve,
    "branch": cmd_branch,
    "check-consistency": cmd_check_consistency,
    "entropy": cmd_entropy,
    "born": cmd_born,
    "trajectory": cmd_trajectory,
    "fidelity": cmd_fidelity,
    "allowed-region": cmd_allowed_region,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refsys", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["validate"]:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario JSON file")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        s.add_argument("--eps-r", type=float, default=None)
        s.add_argument("--eps-d", type=float, default=None)
        s.add_argument("--tau-s", type=float, default=None)
    return p


def _write(out_dir: Path, files: dict[str, str]) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text, encoding="utf-8", newline="\n")
        hashes[name] = hashlib.sha256(text.encode()).hexdigest()
    return hashes


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "eps_r": args.eps_r, "eps_d": args.eps_d, "tau_s": args.tau_s}
    try:
        sc, text = load_config(args.config, overrides)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok")
        return EXIT_OK
    try:
        summary, files, code = COMMANDS[args.command](sc)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RefsysError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    summary = {"scenario": sc.name, "subcommand": args.command, "seed": sc.seed, **summary}
    files[f"{args.command}.json"] = _dumps(summary)
    out_dir = Path(args.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    hashes = _write(out_dir, files)
    manifest = {"subcommand": args.command, "config_sha256": config_hash(text),
                "version": __version__, "seed": sc.seed,
                "overrides": {k: v for k, v in overrides.items() if v is not None},
                "artifacts": hashes, "exit_code": code}
    _write(out_dir, {"manifest.json": _dumps(manifest)})
    verdict = {EXIT_OK: "ok", EXIT_VERDICT: "verdict contradicts assertion"}[code]
    print(f"{args.command}: {verdict}; wrote {len(hashes)} files to {out_dir}")
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))
