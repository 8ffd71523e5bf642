"""Branching trees of path components.

A tree starts from one vector at ``t0``. Whenever a leaf satisfies the
validity condition for some values of a division, it may be split into
the components ``P_m |psi>``, where the ``P_m`` are the selected projectors
plus the complement of their sum. Leaves are stored unnormalized; the
squared norm of a leaf is the probability of its path, and the leaves
always add up to the unitarily evolved initial vector.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .divisions import Division, apply_rs_operator
from .dynamics import ZERO_NORM, Tolerances, leakage, lifted_for
from .errors import ContractViolation, ValidationError
from .linalg import as_vector

__all__ = [
    "SplitOperators",
    "Step",
    "Path",
    "Leaf",
    "SplitEvent",
    "BranchTree",
    "split_operators",
    "qualifying_values",
    "split",
    "path_component",
    "path_probability",
    "tree_density",
    "phase_recombination",
    "grow_tree",
    "TreeRun",
    "POLICIES",
]

POLICIES = ("greedy", "scheduled", "none")

# children with amplitude norm below this are dropped; the branch sum moves by at most this much
DROP_NORM = 1e-13


@dataclass(frozen=True, eq=False)
class SplitOperators:
    """Projectors ``P_m`` of one split: the selected ``P_mu`` and ``1 - sum P_mu``."""

    division: Division
    selected: tuple[str, ...]
    labels: tuple[str, ...]
    operators: tuple[np.ndarray, ...]

    def apply(self, m: str, psi: np.ndarray) -> np.ndarray:
        return apply_rs_operator(self.operator_r(m), psi, self.division.dim_e)

    def operator_r(self, m: str) -> np.ndarray:
        return self.operators[self.labels.index(m)]


def complement_label(selected: Sequence[str]) -> str:
    return "~" + ",".join(selected)


def split_operators(div: Division, selected: Iterable[str]) -> SplitOperators:
    selected = tuple(str(mu) for mu in selected)
    if not selected:
        raise ValidationError("a split needs at least one selected value")
    unknown = [mu for mu in selected if mu not in div.labels]
    if unknown:
        raise ValidationError(f"values {unknown} not in division {div.label!r}")
    if len(set(selected)) != len(selected):
        raise ValidationError("selected values must be distinct")
    # keep division order so identical selections produce identical operators
    selected = tuple(mu for mu in div.labels if mu in selected)
    ops = [div.projector_r(mu) for mu in selected]
    rest = np.eye(div.dim_r, dtype=complex) - sum(ops)
    labels = selected + (complement_label(selected),)
    return SplitOperators(div, selected, labels, tuple(ops) + (rest,))


@dataclass(frozen=True)
class Step:
    time: float
    split: SplitOperators = field(compare=False)
    m: str

    @property
    def division_label(self) -> str:
        return self.split.division.label

    def as_dict(self) -> dict:
        return {"time": self.time, "division": self.division_label,
                "selected": list(self.split.selected), "m": self.m}


@dataclass(frozen=True)
class Path:
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        times = [s.time for s in self.steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("split times along a path must be strictly increasing")

    def extend(self, step: Step) -> "Path":
        return Path(self.steps + (step,))

    @property
    def key(self) -> str:
        if not self.steps:
            return "root"
        return "|".join(f"{s.division_label}:{s.m}@{s.time:.12g}" for s in self.steps)

    @property
    def last_time(self) -> float | None:
        return self.steps[-1].time if self.steps else None

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class Leaf:
    path: Path
    vector: np.ndarray

    @property
    def probability(self) -> float:
        return float(np.vdot(self.vector, self.vector).real)


@dataclass(frozen=True)
class SplitEvent:
    time: float
    parent: str
    division: str
    children: tuple[str, ...]
    parent_probability: float
    child_probabilities: tuple[float, ...]


class BranchTree:
    """Mutable tree of leaves evolved on a common clock."""

    def __init__(self, system, psi0, t0: float = 0.0):
        self.system = system
        self.psi0 = as_vector(psi0, system.dim).copy()
        self.psi0.setflags(write=False)
        self.t0 = float(t0)
        self.t = float(t0)
        self.leaves: list[Leaf] = [Leaf(Path(), self.psi0.copy())]
        self.events: list[SplitEvent] = []
        self.truncated = False

    def __len__(self) -> int:
        return len(self.leaves)

    @property
    def paths(self) -> list[Path]:
        return [leaf.path for leaf in self.leaves]

    def components(self) -> np.ndarray:
        return np.array([leaf.vector for leaf in self.leaves])

    def probabilities(self) -> np.ndarray:
        c = self.components()
        return np.sum(np.abs(c) ** 2, axis=1)

    def total_vector(self) -> np.ndarray:
        return self.components().sum(axis=0)

    def advance(self, t: float) -> None:
        t = float(t)
        if t < self.t:
            raise ValidationError(f"cannot advance tree backwards from {self.t} to {t}")
        if t == self.t:
            return
        for leaf in self.leaves:
            leaf.vector = self.system.evolve(leaf.vector, self.t, t)
        self.t = t

    def leaf_index(self, path: Path | str) -> int:
        key = path if isinstance(path, str) else path.key
        for i, leaf in enumerate(self.leaves):
            if leaf.path.key == key:
                return i
        raise KeyError(f"no leaf with path {key!r}")


def qualifying_values(system, div: Division, psi: np.ndarray, t: float,
                      tol: Tolerances) -> tuple[str, ...]:
    """Values of ``div`` whose (non-negligible) component of ``psi`` satisfies the condition."""
    div = lifted_for(div, system)
    norm2 = float(np.vdot(psi, psi).real)
    out = []
    for mu in div.labels:
        if div.weight(mu, psi) <= ZERO_NORM * max(norm2, 1.0):
            continue
        if leakage(system, div, mu, psi, t, tol.tau_s, tol.n_samples) <= tol.eps_r:
            out.append(mu)
    return tuple(out)


def split(tree: BranchTree, leaf: int | Path | str, t_n: float, div: Division,
          tol: Tolerances, mus: Iterable[str] | None = None,
          min_child_weight: float = 0.0) -> int:
    """Split one leaf at ``t_n``; returns the number of children created (0 if unchanged).

    The tree is first advanced to ``t_n``. With ``mus=None`` every qualifying
    value is selected. Explicitly requested values must satisfy the condition.
    The split is skipped unless at least two children carry weight above
    ``min_child_weight``.

    Raises
    ------
    ContractViolation
        If a value in ``mus`` does not satisfy the validity condition.
    """
    div = lifted_for(div, tree.system)
    tree.advance(t_n)
    idx = leaf if isinstance(leaf, int) else tree.leaf_index(leaf)
    parent = tree.leaves[idx]
    psi = parent.vector
    if mus is None:
        selected = qualifying_values(tree.system, div, psi, tree.t, tol)
    else:
        selected = tuple(str(mu) for mu in mus)
        norm2 = float(np.vdot(psi, psi).real)
        for mu in selected:
            if div.weight(mu, psi) <= ZERO_NORM * max(norm2, 1.0):
                raise ContractViolation(f"value {mu!r} has no component in leaf {parent.path.key!r}")
            lk = leakage(tree.system, div, mu, psi, tree.t, tol.tau_s, tol.n_samples)
            if lk > tol.eps_r:
                raise ContractViolation(
                    f"value {mu!r} of division {div.label!r} fails the validity condition "
                    f"at t={tree.t:.6g} (leakage {lk:.3e} > eps_r {tol.eps_r:.3e})")
    if not selected or div.is_trivial:
        return 0
    ops = split_operators(div, selected)
    children = []
    for m in ops.labels:
        vec = ops.apply(m, psi)
        if np.linalg.norm(vec) >= DROP_NORM:
            children.append((m, vec))
    heavy = sum(1 for _, vec in children if np.vdot(vec, vec).real > min_child_weight)
    if len(children) < 2 or heavy < 2:
        return 0
    new = [Leaf(parent.path.extend(Step(tree.t, ops, m)), vec) for m, vec in children]
    tree.leaves[idx:idx + 1] = new
    tree.events.append(SplitEvent(
        tree.t, parent.path.key, div.label, tuple(leaf.path.key for leaf in new),
        parent.probability, tuple(leaf.probability for leaf in new)))
    return len(new)


def path_component(tree: BranchTree, path: Path | str, t: float | None = None) -> np.ndarray:
    """Recompute ``U(t,t_n) P_m(n) U(t_n,t_{n-1}) ... P_m(0) psi(t0)`` from the initial vector."""
    if isinstance(path, str):
        path = tree.leaves[tree.leaf_index(path)].path
    t = tree.t if t is None else float(t)
    if path.steps and t < path.last_time:
        raise ValidationError("t precedes the last split of the path")
    psi = np.array(tree.psi0)
    cur = tree.t0
    for step in path.steps:
        psi = tree.system.evolve(psi, cur, step.time)
        psi = step.split.apply(step.m, psi)
        cur = step.time
    return tree.system.evolve(psi, cur, t)


def path_probability(tree: BranchTree, path: Path | str, t: float | None = None) -> float:
    psi = path_component(tree, path, t)
    return float(np.vdot(psi, psi).real)


def tree_density(tree: BranchTree, t: float | None = None) -> np.ndarray:
    """``sum_alpha |psi_alpha(t)><psi_alpha(t)|``."""
    if t is None or float(t) == tree.t:
        comps = tree.components()
    else:
        comps = np.array([path_component(tree, p, t) for p in tree.paths])
    return comps.T @ comps.conj()


def phase_recombination(psi, div: Division, mu: str, theta1: float, theta2: float,
                        system=None, t: float = 0.0, tol: Tolerances | None = None) -> np.ndarray:
    """``exp(i theta1) P_mu psi + exp(i theta2) (1 - P_mu) psi``.

    When ``system`` and ``tol`` are given the validity condition for ``mu`` is
    checked first.
    """
    psi = np.asarray(psi, dtype=complex)
    if system is not None:
        div = lifted_for(div, system)
        if tol is not None:
            lk = leakage(system, div, mu, psi, t, tol.tau_s, tol.n_samples)
            if lk > tol.eps_r:
                raise ContractViolation(f"value {mu!r} fails the validity condition")
    comp = div.apply(mu, psi)
    return np.exp(1j * theta1) * comp + np.exp(1j * theta2) * (psi - comp)


@dataclass
class TreeRun:
    """A tree grown on a time grid together with its probability record."""

    tree: BranchTree
    policy: str
    times: np.ndarray
    probabilities: list[dict[str, float]]
    split_flags: np.ndarray

    def probability_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "path", "probability"])
        for t, probs in zip(self.times, self.probabilities):
            for key, p in probs.items():
                w.writerow([f"{t:.12g}", key, f"{p:.12g}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return tree_to_dict(self.tree, self.policy)


def tree_to_dict(tree: BranchTree, policy: str | None = None) -> dict:
    return {
        "policy": policy,
        "t0": tree.t0,
        "t": tree.t,
        "truncated": tree.truncated,
        "paths": [
            {"key": leaf.path.key, "steps": [s.as_dict() for s in leaf.path.steps],
             "probability": leaf.probability}
            for leaf in tree.leaves
        ],
        "events": [
            {"time": e.time, "parent": e.parent, "division": e.division,
             "children": list(e.children), "parent_probability": e.parent_probability,
             "child_probabilities": list(e.child_probabilities)}
            for e in tree.events
        ],
    }


def tree_json(tree: BranchTree, policy: str | None = None) -> str:
    return json.dumps(tree_to_dict(tree, policy), indent=2, sort_keys=True)


def grow_tree(system, psi0, grid: Sequence[float], divisions: Sequence[Division] = (),
              tol: Tolerances | None = None, policy: str = "greedy",
              schedule: Sequence[tuple] = (), min_child_weight: float = 1e-12,
              max_leaves: int = 4096, on_step=None, on_advance=None) -> TreeRun:
    """Grow a tree over ``grid`` (``grid[0]`` is ``t0``).

    ``greedy``: at every grid time, split each leaf on the first division in
    ``divisions`` that yields a split. ``scheduled``: ``schedule`` holds
    ``(time, division)`` or ``(time, division, mus)`` entries, applied to
    every leaf at that time (times are merged into the grid). ``none``: plain
    evolution. ``on_step(tree)`` is called after the splits of each grid time;
    returning ``True`` from it stops the growth early. ``on_advance(tree)`` is
    called after evolving to each grid time, before its splits.
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown split policy {policy!r}; expected one of {POLICIES}")
    tol = tol or Tolerances()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be a non-empty strictly increasing sequence")
    divisions = [lifted_for(d, system) for d in divisions]
    by_time: dict[float, list] = {}
    if policy == "scheduled":
        for entry in schedule:
            t_s, div = float(entry[0]), lifted_for(entry[1], system)
            mus = entry[2] if len(entry) > 2 else None
            by_time.setdefault(t_s, []).append((div, mus))
        grid = np.union1d(grid, [t for t in by_time if t >= grid[0]])
    tree = BranchTree(system, psi0, grid[0])
    probs, flags = [], []
    for t in grid:
        tree.advance(t)
        if on_advance is not None:
            on_advance(tree)
        n_events = len(tree.events)
        if policy == "greedy":
            _greedy_step(tree, divisions, tol, min_child_weight, max_leaves)
        elif policy == "scheduled":
            for div, mus in by_time.get(float(t), []):
                for leaf in list(tree.leaves):
                    if len(tree.leaves) >= max_leaves:
                        tree.truncated = True
                        break
                    split(tree, leaf.path, t, div, tol, mus, min_child_weight=0.0)
        flags.append(len(tree.events) > n_events)
        probs.append({leaf.path.key: leaf.probability for leaf in tree.leaves})
        if on_step is not None and on_step(tree):
            grid = grid[:len(flags)]
            break
    return TreeRun(tree, policy, grid, probs, np.array(flags))


def _greedy_step(tree: BranchTree, divisions, tol, min_child_weight, max_leaves) -> None:
    for leaf in list(tree.leaves):
        for div in divisions:
            if div.is_trivial:
                continue
            if len(tree.leaves) + len(div) - 1 > max_leaves:
                tree.truncated = True
                return
            if split(tree, leaf.path, tree.t, div, tol, None, min_child_weight):
                break
