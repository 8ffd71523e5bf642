"""Decoherence matrices, the consistency check and related diagnostics.

For a tree with leaves ``Psi_alpha(t)`` and a division ``{P_mu}`` the
decoherence matrix is ``D^mu_{alpha alpha'} = <Psi_alpha|P_mu|Psi_alpha'>``.
A description in the frame of the division is consistent at ``t`` when
every normalized off-diagonal element
``|D_{aa'}| / sqrt(D_aa D_a'a')`` stays below ``eps_d``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .branching import BranchTree, grow_tree, path_component
from .divisions import Division, DivisionSet, apply_rs_operator
from .dynamics import ZERO_NORM, Tolerances, leakage, lifted_for
from .errors import DimensionError, UndefinedConditionError, ValidationError
from .linalg import as_operator, as_vector

__all__ = [
    "DecoherenceMatrix",
    "ConsistencyVerdict",
    "AllowedRegionResult",
    "NestedPrediction",
    "DIAG_FLOOR",
    "decoherence_matrix",
    "normalized_offdiag",
    "check_principle",
    "allowed_region_test",
    "reversed_system",
    "time_reversed_vector",
    "nested_prediction_check",
    "chi_functional",
    "path_chains",
    "chi_matrix",
    "chi_consistency",
]

# diagonal entries below this are left out of the normalized ratio
DIAG_FLOOR = 1e-12
NESTING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DecoherenceMatrix:
    """``entries[k]`` is the matrix ``D^mu`` for ``mu = labels[k]``."""

    division: str
    labels: tuple[str, ...]
    paths: tuple[str, ...]
    time: float
    entries: np.ndarray

    def __getitem__(self, mu: str) -> np.ndarray:
        return self.entries[self.labels.index(str(mu))]

    def path_probabilities(self) -> np.ndarray:
        """``P_alpha = sum_mu D^mu_{alpha alpha}`` (over all values of the division)."""
        return np.einsum("kaa->a", self.entries).real

    def value_probability(self, mu: str, coherent: bool = True) -> float:
        """``sum_{aa'} D^mu`` (coherent) or ``sum_a D^mu_aa``."""
        d = self[mu]
        return float(d.sum().real if coherent else np.trace(d).real)

    def to_rows(self) -> list[list[str]]:
        rows = []
        for mu, d in zip(self.labels, self.entries):
            for a, pa in enumerate(self.paths):
                for b, pb in enumerate(self.paths):
                    rows.append([mu, pa, pb, f"{d[a, b].real:.12g}", f"{d[a, b].imag:.12g}"])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "path", "path_prime", "re", "im"])
        w.writerows(self.to_rows())
        return buf.getvalue()


@dataclass(frozen=True)
class ConsistencyVerdict:
    """Outcome of one consistency check.

    ``status`` is ``"pass"``, ``"fail"`` or ``"not-applicable"``; the last
    one means no tested value satisfies the validity condition on the
    total vector, which is different from a failed check.
    """

    status: str
    division: str
    time: float
    eps_d: float
    max_offdiag: float = 0.0
    witness: tuple | None = None
    values: tuple[str, ...] = ()

    @property
    def passed(self) -> bool | None:
        return None if self.status == "not-applicable" else self.status == "pass"

    def as_dict(self) -> dict:
        return {"status": self.status, "division": self.division, "time": self.time,
                "eps_d": self.eps_d, "max_offdiag": self.max_offdiag,
                "witness": list(self.witness) if self.witness else None,
                "values": list(self.values)}


def _components(tree: BranchTree, t: float | None) -> np.ndarray:
    if t is None or float(t) == tree.t:
        return tree.components()
    return np.array([path_component(tree, leaf.path, t) for leaf in tree.leaves])


def decoherence_matrix(tree: BranchTree, div: Division, t: float | None = None) -> DecoherenceMatrix:
    """``D[mu][a][a'] = <Psi_a(t)|P_mu|Psi_a'(t)>`` for every value of ``div``.

    ``t`` defaults to the tree's current time; other times (not before the
    last split) are recomputed from the initial vector.
    """
    div = lifted_for(div, tree.system)
    comps = _components(tree, t)
    n = comps.shape[0]
    c = comps.reshape(n, div.dim_r, div.dim_e)
    entries = np.empty((len(div), n, n), dtype=complex)
    for k, (_, p) in enumerate(div.projectors):
        pc = np.einsum("ab,nbj->naj", p, c).reshape(n, -1)
        entries[k] = comps.conj() @ pc.T
    return DecoherenceMatrix(div.label, div.labels, tuple(leaf.path.key for leaf in tree.leaves),
                             tree.t if t is None else float(t), entries)


def normalized_offdiag(d: np.ndarray, floor: float = DIAG_FLOOR) -> tuple[float, tuple | None]:
    """Largest ``|d_ab| / sqrt(d_aa d_bb)`` over ``a != b`` with both diagonals above ``floor``.

    Returns the value and the index pair that attains it (``None`` if no pair qualifies).
    """
    diag = np.real(np.diag(d))
    keep = np.flatnonzero(diag >= floor)
    if keep.size < 2:
        return 0.0, None
    sub = np.abs(d[np.ix_(keep, keep)])
    scale = np.sqrt(np.outer(diag[keep], diag[keep]))
    ratio = sub / scale
    np.fill_diagonal(ratio, -1.0)
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[i, j]), (int(keep[i]), int(keep[j]))


def _applicable_values(system, div: Division, total: np.ndarray, t: float,
                       tol: Tolerances, mus) -> tuple[str, ...]:
    norm2 = float(np.vdot(total, total).real)
    out = []
    for mu in (div.labels if mus is None else mus):
        if div.weight(mu, total) <= ZERO_NORM * max(norm2, 1.0):
            continue
        try:
            lk = leakage(system, div, mu, total, t, tol.tau_s, tol.n_samples)
        except UndefinedConditionError:
            continue
        if lk <= tol.eps_r:
            out.append(mu)
    return tuple(out)


def check_principle(tree: BranchTree, div: Division, t: float | None = None,
                    eps_d: float | None = None, tol: Tolerances | None = None,
                    mu: str | Sequence[str] | None = None) -> ConsistencyVerdict:
    """Test near-diagonality of ``D^mu`` for the applicable values of ``div``.

    A value is applicable when its component of the total vector
    ``sum_a Psi_a(t)`` is non-zero and satisfies the validity condition.
    With ``mu=None`` every applicable value is tested.
    """
    tol = tol or Tolerances()
    eps_d = tol.eps_d if eps_d is None else float(eps_d)
    div = lifted_for(div, tree.system)
    t = tree.t if t is None else float(t)
    mus = None if mu is None else ((str(mu),) if isinstance(mu, str) else tuple(map(str, mu)))
    comps = _components(tree, t)
    total = comps.sum(axis=0)
    values = _applicable_values(tree.system, div, total, t, tol, mus)
    if not values:
        return ConsistencyVerdict("not-applicable", div.label, t, eps_d)
    dm = decoherence_matrix(tree, div, t)
    worst, witness = 0.0, None
    for v in values:
        r, pair = normalized_offdiag(dm[v])
        if pair is not None and (witness is None or r > worst):
            worst, witness = r, (v, dm.paths[pair[0]], dm.paths[pair[1]])
    status = "pass" if worst <= eps_d else "fail"
    return ConsistencyVerdict(status, div.label, t, eps_d, worst, witness, values)


@dataclass
class AllowedRegionResult:
    passed: bool
    n_checks: int
    n_not_applicable: int
    first_violation: dict | None = None
    trees: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "n_checks": self.n_checks,
                "n_not_applicable": self.n_not_applicable,
                "first_violation": self.first_violation,
                "trees": self.trees}


def allowed_region_test(system, psi0, divisions: DivisionSet | Sequence[Division], grid,
                        tol: Tolerances | None = None, schedule: Sequence[tuple] = (),
                        min_child_weight: float = 1e-12,
                        max_leaves: int = 4096) -> AllowedRegionResult:
    """Check whether ``psi0`` lies in the allowed region for ``divisions``.

    Greedy trees are grown from the normalized ``psi0`` for every non-trivial
    division alone and, when there are several, for all of them together.
    With a non-empty ``schedule`` a single scheduled tree is used instead.
    At every grid time each division of the set (the trivial one included)
    is checked on each tree; the test passes iff no applicable check fails.
    """
    tol = tol or Tolerances()
    psi0 = as_vector(psi0, system.dim)
    norm = np.linalg.norm(psi0)
    if norm == 0:
        raise ValidationError("initial vector has zero norm")
    psi0 = psi0 / norm
    dset = divisions if isinstance(divisions, DivisionSet) else DivisionSet(tuple(divisions))
    divs = [lifted_for(d, system) for d in dset]
    nontrivial = [d for d in divs if not d.is_trivial]
    if schedule:
        plans = {"scheduled": ("scheduled", [])}
    else:
        plans = {d.label: ("greedy", [d]) for d in nontrivial}
        if len(nontrivial) > 1:
            plans["+".join(d.label for d in nontrivial)] = ("greedy", nontrivial)
        if not plans:
            plans = {"none": ("none", [])}

    result = AllowedRegionResult(True, 0, 0)
    for name, (policy, plan_divs) in plans.items():
        def on_step(tree, name=name):
            for d in divs:
                v = check_principle(tree, d, None, tol=tol)
                result.n_checks += 1
                if v.status == "not-applicable":
                    result.n_not_applicable += 1
                elif v.status == "fail":
                    result.passed = False
                    result.first_violation = {"tree": name, **v.as_dict()}
                    return True
            return False

        run = grow_tree(system, psi0, grid, plan_divs, tol, policy, schedule,
                        min_child_weight, max_leaves, on_step=on_step)
        result.trees[name] = {"policy": policy, "leaves": len(run.tree),
                              "splits": len(run.tree.events), "truncated": run.tree.truncated}
        if not result.passed:
            break
    return result


def reversed_system(system, t: float):
    """System whose time ``s`` runs backwards from ``t`` under ``-H``."""
    return system.reversed(t)


def time_reversed_vector(system, psi0, t0: float, t: float, div: Division | None = None,
                         min_weight: float = 1e-6) -> np.ndarray:
    """``Psi(t) = U(t, t0) psi0``, meant as the initial vector of the reversed system.

    Evolving it under :func:`reversed_system` for ``t - t0`` returns ``psi0``.
    When ``div`` is given, ``Psi(t)`` must carry at least ``min_weight`` in
    two or more of its subspaces.
    """
    psi0 = as_vector(psi0, system.dim)
    psi_t = system.evolve(psi0, t0, t)
    if div is not None:
        div = lifted_for(div, system)
        spread = sum(1 for mu in div.labels if div.weight(mu, psi_t) >= min_weight)
        if spread < 2:
            raise ValidationError(
                f"forward evolution occupies only {spread} subspace(s) of {div.label!r} at t={t}")
    return psi_t


@dataclass(frozen=True)
class NestedPrediction:
    p_mu: float
    p_mu_nu: float
    p_nu: float
    residual: float


def nested_prediction_check(psi, div_mu: Division, mu: str, div_nu: Division, nu: str,
                            system=None, t: float = 0.0,
                            tol: Tolerances | None = None) -> NestedPrediction:
    """Compare ``p_nu`` with ``p_{mu nu} p_mu`` for a subspace ``H_nu`` inside ``H_mu``.

    ``p_{mu nu}`` is the probability of ``nu`` given the normalized ``mu``
    component. With ``system`` and ``tol`` both validity conditions are
    checked on ``psi`` at ``t`` first.

    Raises
    ------
    ValidationError
        If ``P_nu P_mu != P_nu``.
    """
    p_m, p_n = div_mu.projector_r(mu), div_nu.projector_r(nu)
    if p_m.shape != p_n.shape:
        raise DimensionError("the two divisions act on different spaces")
    if np.max(np.abs(p_n @ p_m - p_n)) > NESTING_TOL:
        raise ValidationError(f"subspace {nu!r} is not contained in subspace {mu!r}")
    psi = np.asarray(psi, dtype=complex)
    dim_e = psi.size // p_m.shape[0]
    if dim_e * p_m.shape[0] != psi.size:
        raise DimensionError("vector length is not a multiple of the projector dimension")
    if system is not None and tol is not None:
        for d, v in ((div_mu, mu), (div_nu, nu)):
            lk = leakage(system, d, v, psi, t, tol.tau_s, tol.n_samples)
            if lk > tol.eps_r:
                raise ValidationError(f"value {v!r} of {d.label!r} fails the validity condition")
    norm2 = float(np.vdot(psi, psi).real)
    comp_m = apply_rs_operator(p_m, psi, dim_e)
    w_m = float(np.vdot(comp_m, comp_m).real)
    if w_m <= ZERO_NORM * max(norm2, 1.0):
        raise UndefinedConditionError(f"value {mu!r} has zero probability")
    comp_n = apply_rs_operator(p_n, psi, dim_e)
    w_n = float(np.vdot(comp_n, comp_n).real)
    comp_mn = apply_rs_operator(p_n, comp_m, dim_e)
    p_mu = w_m / norm2
    p_nu = w_n / norm2
    p_mu_nu = float(np.vdot(comp_mn, comp_mn).real) / w_m
    return NestedPrediction(p_mu, p_mu_nu, p_nu, abs(p_nu - p_mu_nu * p_mu))


# --- decoherence functional of consistent histories ---

def _chain_operator(system, p) -> np.ndarray | None:
    if p is None:
        return None
    p = as_operator(p)
    if p.shape[0] == system.dim:
        return p
    if p.shape[0] == system.dim_r:
        return np.kron(p, np.eye(system.dim_e))
    raise DimensionError(f"chain projector of dim {p.shape[0]} fits neither H nor H_R")


def _apply_chain(system, chain, t0: float, x: np.ndarray) -> np.ndarray:
    """``P^(n) U ... P^(1) U(t1, t0) x``; ``x`` is a vector or a matrix (acting on columns)."""
    cur = float(t0)
    for p, t in chain:
        u = system.propagator(t, cur)
        x = u @ x
        op = _chain_operator(system, p)
        if op is not None:
            x = op @ x
        cur = float(t)
    return x


def _check_chains(chain, chain2, t0):
    if len(chain) != len(chain2):
        raise ValidationError(f"chains differ in length ({len(chain)} vs {len(chain2)})")
    times = [float(t) for _, t in chain]
    if times != [float(t) for _, t in chain2]:
        raise ValidationError("the two chains must share their times")
    if times and (times[0] < t0 or any(b < a for a, b in zip(times, times[1:]))):
        raise ValidationError("chain times must be ordered and not precede t0")


def chi_functional(system, rho0, t0: float, chain: Sequence[tuple], chain2: Sequence[tuple]) -> complex:
    """``Tr[C rho0 C'^dag]`` with ``C = P^(n) U(t_n, t_{n-1}) ... P^(1) U(t_1, t0)``.

    Chain entries are ``(projector, time)``; a projector may act on H or on
    H_R (it is lifted), and ``None`` stands for the identity. ``rho0`` may be
    a density matrix or a state vector.
    """
    _check_chains(chain, chain2, float(t0))
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        a = _apply_chain(system, chain, t0, rho0)
        b = _apply_chain(system, chain2, t0, rho0)
        return complex(np.vdot(b, a))
    rho0 = as_operator(rho0, system.dim)
    a = _apply_chain(system, chain, t0, rho0)
    c2 = _apply_chain(system, chain2, t0, np.eye(system.dim, dtype=complex))
    return complex(np.sum(a * c2.conj()))


def path_chains(tree: BranchTree, final_projector=None, t: float | None = None) -> list[list[tuple]]:
    """Chains of the tree's leaves over the union of all split times.

    A path that did not split at one of the union times gets the identity
    there. ``final_projector`` (on H_R or H) is appended at ``t``.
    """
    t = tree.t if t is None else float(t)
    times = sorted({s.time for leaf in tree.leaves for s in leaf.path.steps})
    chains = []
    for leaf in tree.leaves:
        by_time = {s.time: s.split.operator_r(s.m) for s in leaf.path.steps}
        chain = [(by_time.get(tau), tau) for tau in times]
        chain.append((final_projector, t))
        chains.append(chain)
    return chains


def chi_matrix(system, rho0, t0: float, chains: Sequence[Sequence[tuple]]) -> np.ndarray:
    """``X[a, b] = chi(chain_a, chain_b)``."""
    n = len(chains)
    x = np.empty((n, n), dtype=complex)
    for a in range(n):
        for b in range(a, n):
            x[a, b] = chi_functional(system, rho0, t0, chains[a], chains[b])
            x[b, a] = np.conj(x[a, b])
    return x


def chi_consistency(x: np.ndarray, eps_d: float, floor: float = DIAG_FLOOR) -> tuple[bool, float, tuple | None]:
    """Near-diagonality of a decoherence-functional matrix, with the same ratio as the D check."""
    r, pair = normalized_offdiag(np.asarray(x), floor)
    return r <= eps_d, r, pair
