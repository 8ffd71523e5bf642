"""Von Neumann entropy of descriptions and of branching trees."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .branching import BranchTree, grow_tree
from .divisions import DivisionSet
from .dynamics import Tolerances, lifted_for
from .errors import ValidationError
from .linalg import as_operator, is_hermitian

__all__ = ["EntropySeries", "von_neumann_entropy", "tree_entropy", "shannon_entropy",
           "max_entropy_series", "EIG_FLOOR"]

# eigenvalues (or probabilities) below this count as exact zeros
EIG_FLOOR = 1e-14
PSD_TOL = 1e-8


def shannon_entropy(p) -> float:
    """``-sum p ln p`` over entries above ``EIG_FLOOR``."""
    p = np.asarray(p, dtype=float)
    p = p[p > EIG_FLOOR]
    # rounding can push p slightly above 1, giving -0.0-ish values
    return max(float(-np.sum(p * np.log(p))), 0.0) if p.size else 0.0


def von_neumann_entropy(rho) -> float:
    """``-Tr rho ln rho`` in nats.

    Raises
    ------
    ValidationError
        If ``rho`` is not Hermitian, has trace other than 1 or an eigenvalue
        below ``-1e-8``.
    """
    rho = as_operator(rho)
    if not is_hermitian(rho, PSD_TOL):
        raise ValidationError("density operator is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > PSD_TOL:
        raise ValidationError(f"density operator has trace {tr:.12g}, expected 1")
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if w.min() < -PSD_TOL:
        raise ValidationError(f"density operator has negative eigenvalue {w.min():.3e}")
    return shannon_entropy(w)


def tree_entropy(tree: BranchTree, t: float | None = None) -> float:
    """``-sum_alpha P_alpha ln P_alpha``.

    Path probabilities do not change between splits, so ``t`` only has to
    lie after the last split; it is accepted for symmetry with other checks.
    """
    if t is not None:
        last = max((leaf.path.last_time or tree.t0 for leaf in tree.leaves), default=tree.t0)
        if float(t) < last:
            raise ValidationError("t precedes a split of the tree")
    return shannon_entropy(tree.probabilities())


@dataclass
class EntropySeries:
    """Entropy on a time grid.

    ``s_tree`` follows the greedy tree that splits on every division of the
    set; ``s_max`` is the largest entropy among that tree and the greedy trees
    of each single division. ``s_before`` holds the entropy at each grid time
    before that time's splits, so ``s_tree - s_before`` is the jump caused
    by splitting.
    """

    times: np.ndarray
    s_tree: np.ndarray
    s_max: np.ndarray
    s_before: np.ndarray
    split: np.ndarray

    def jumps(self) -> np.ndarray:
        return self.s_tree - self.s_before

    def drift(self) -> np.ndarray:
        """Entropy change between consecutive grid times, excluding splits."""
        return self.s_before[1:] - self.s_tree[:-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "S_tree", "S_max", "split"])
        for t, s, m, f in zip(self.times, self.s_tree, self.s_max, self.split):
            w.writerow([f"{t:.12g}", f"{s:.12g}", f"{m:.12g}", int(f)])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"times": self.times.tolist(), "S_tree": self.s_tree.tolist(),
                "S_max": self.s_max.tolist(), "split": self.split.astype(int).tolist()}


def _greedy_entropies(system, psi0, grid, divs, tol, min_child_weight, max_leaves):
    before = []
    run = grow_tree(system, psi0, grid, divs, tol, "greedy", (), min_child_weight, max_leaves,
                    on_advance=lambda tree: before.append(shannon_entropy(tree.probabilities())))
    after = np.array([shannon_entropy(list(p.values())) for p in run.probabilities])
    return after, np.array(before), np.asarray(run.split_flags, dtype=bool)


def max_entropy_series(system, psi0, divisions: DivisionSet | Sequence, grid,
                       tol: Tolerances | None = None, min_child_weight: float = 1e-12,
                       max_leaves: int = 4096) -> EntropySeries:
    """Greedy estimate of the largest tree entropy reachable at each grid time.

    Splitting whenever possible gives a lower bound on the supremum over all
    trees; the single-division greedy trees are included to tighten it.
    """
    tol = tol or Tolerances()
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValidationError("initial vector must be normalized")
    grid = np.asarray(grid, dtype=float)
    dset = divisions if isinstance(divisions, DivisionSet) else DivisionSet(tuple(divisions))
    nontrivial = [lifted_for(d, system) for d in dset.nontrivial]
    s_tree, s_before, flags = _greedy_entropies(system, psi0, grid, nontrivial, tol,
                                                min_child_weight, max_leaves)
    s_max = s_tree.copy()
    if len(nontrivial) > 1:
        for d in nontrivial:
            s, _, _ = _greedy_entropies(system, psi0, grid, [d], tol, min_child_weight, max_leaves)
            s_max = np.maximum(s_max, s)
    # the supremum over trees cannot decrease with time
    s_max = np.maximum.accumulate(s_max)
    return EntropySeries(grid, s_tree, s_max, s_before, flags)
