"""Divisions of the reference-system space into orthogonal subspaces.

A division is a complete family of mutually orthogonal projectors on H_R.
Projectors are stored on H_R; a division lifted to the total space keeps
the same H_R matrices and records ``dim_e`` so that application to a total
vector is a reshape followed by a small matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, DimensionError, ValidationError
from .linalg import MAX_DIM, as_operator, op_norm, require_hermitian

__all__ = [
    "PROJECTOR_TOL",
    "Division",
    "DivisionSet",
    "StabilityReport",
    "trivial_division",
    "explicit_division",
    "basis_division",
    "eigenspace_division",
    "lift",
    "stability_check",
    "apply_rs_operator",
]

PROJECTOR_TOL = 1e-10
TRIVIAL_LABEL = "I"


def apply_rs_operator(op_r: np.ndarray, psi: np.ndarray, dim_e: int) -> np.ndarray:
    """Apply ``op_r (x) I_E`` to a total-space vector."""
    dim_r = op_r.shape[0]
    return (op_r @ psi.reshape(dim_r, dim_e)).reshape(-1)


@dataclass(frozen=True, eq=False)
class Division:
    label: str
    dim_r: int
    projectors: tuple[tuple[str, np.ndarray], ...]
    dim_e: int = 1
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        projs = []
        for mu, p in self.projectors:
            p = as_operator(p, self.dim_r)
            p.setflags(write=False)
            projs.append((str(mu), p))
        object.__setattr__(self, "projectors", tuple(projs))
        labels = [mu for mu, _ in projs]
        if not labels:
            raise ValidationError(f"division {self.label!r} has no projectors")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"division {self.label!r} has duplicate value labels")
        if self.dim_e < 1:
            raise ValidationError("dim_e must be >= 1")
        object.__setattr__(self, "_index", {mu: i for i, mu in enumerate(labels)})
        _validate_projectors(self.label, [p for _, p in projs], self.dim_r)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(mu for mu, _ in self.projectors)

    @property
    def dim(self) -> int:
        return self.dim_r * self.dim_e

    @property
    def is_trivial(self) -> bool:
        return len(self.projectors) == 1

    def __len__(self) -> int:
        return len(self.projectors)

    def projector_r(self, mu: str) -> np.ndarray:
        try:
            return self.projectors[self._index[str(mu)]][1]
        except KeyError:
            raise KeyError(f"division {self.label!r} has no value {mu!r}") from None

    def projector(self, mu: str) -> np.ndarray:
        """Dense projector on the space this division acts on (lifted if ``dim_e > 1``)."""
        p = self.projector_r(mu)
        if self.dim_e == 1:
            return p.copy()
        return np.kron(p, np.eye(self.dim_e))

    def complement_r(self, mu: str) -> np.ndarray:
        return np.eye(self.dim_r) - self.projector_r(mu)

    def rank(self, mu: str) -> int:
        return int(round(np.trace(self.projector_r(mu)).real)) * self.dim_e

    def apply(self, mu: str, psi: np.ndarray) -> np.ndarray:
        return apply_rs_operator(self.projector_r(mu), psi, self.dim_e)

    def apply_complement(self, mu: str, psi: np.ndarray) -> np.ndarray:
        return psi - self.apply(mu, psi)

    def weight(self, mu: str, psi: np.ndarray) -> float:
        x = self.apply(mu, psi)
        return float(np.vdot(x, x).real)


def _validate_projectors(label: str, projs: Sequence[np.ndarray], dim_r: int,
                         tol: float = PROJECTOR_TOL) -> None:
    total = np.zeros((dim_r, dim_r), dtype=complex)
    for i, p in enumerate(projs):
        require_hermitian(p, tol, f"projector {i} of division {label!r}")
        if np.max(np.abs(p @ p - p)) > tol:
            raise ValidationError(f"projector {i} of division {label!r} is not idempotent")
        for j in range(i):
            if np.max(np.abs(p @ projs[j])) > tol:
                raise ValidationError(
                    f"projectors {j} and {i} of division {label!r} are not orthogonal")
        total += p
    if np.max(np.abs(total - np.eye(dim_r))) > tol:
        raise ValidationError(f"projectors of division {label!r} do not sum to the identity")


def trivial_division(dim_r: int) -> Division:
    if dim_r < 1:
        raise ValidationError("dim_r must be >= 1")
    return Division(TRIVIAL_LABEL, dim_r, ((TRIVIAL_LABEL, np.eye(dim_r, dtype=complex)),))


def explicit_division(label: str, projectors) -> Division:
    """Build a division from ``{mu: matrix}`` or ``[(mu, matrix), ...]``."""
    items = list(projectors.items()) if isinstance(projectors, dict) else list(projectors)
    if not items:
        raise ValidationError(f"division {label!r} has no projectors")
    dim_r = np.asarray(items[0][1]).shape[0]
    return Division(label, dim_r, tuple((str(mu), p) for mu, p in items))


def basis_division(label: str, dim_r: int, groups: Iterable[Sequence[int]] | None = None,
                   labels: Sequence[str] | None = None) -> Division:
    """Division spanned by groups of computational basis states (default: one per state)."""
    groups = [list(g) for g in groups] if groups is not None else [[k] for k in range(dim_r)]
    labels = list(labels) if labels is not None else [str(k + 1) for k in range(len(groups))]
    if len(labels) != len(groups):
        raise ValidationError("labels and groups differ in length")
    items = []
    for mu, g in zip(labels, groups):
        p = np.zeros((dim_r, dim_r), dtype=complex)
        p[g, g] = 1.0
        items.append((mu, p))
    return Division(label, dim_r, tuple(items))


def eigenspace_division(label: str, operator, groups: Sequence[Sequence[int]] | None = None,
                        labels: Sequence[str] | None = None, degeneracy_tol: float = 1e-8) -> Division:
    """Division into eigenspaces of a Hermitian operator.

    Eigenvalues are sorted ascending. Without ``groups``, eigenvalues closer
    than ``degeneracy_tol`` share a subspace; with ``groups``, each group lists
    sorted eigenvalue indices to merge into one projector.
    """
    op = require_hermitian(operator, name=f"operator for division {label!r}")
    w, v = np.linalg.eigh(0.5 * (op + op.conj().T))
    if groups is None:
        groups, current = [], [0]
        for k in range(1, w.size):
            if w[k] - w[k - 1] <= degeneracy_tol:
                current.append(k)
            else:
                groups.append(current)
                current = [k]
        groups.append(current)
    flat = sorted(k for g in groups for k in g)
    if flat != list(range(w.size)):
        raise ValidationError(f"eigenspace groups of division {label!r} must partition 0..{w.size - 1}")
    if labels is None:
        labels = [str(i + 1) for i in range(len(groups))]
    if len(labels) != len(groups):
        raise ValidationError("labels and groups differ in length")
    items = []
    for mu, g in zip(labels, groups):
        vecs = v[:, list(g)]
        items.append((str(mu), vecs @ vecs.conj().T))
    return Division(label, op.shape[0], tuple(items))


def lift(div: Division, dim_e: int) -> Division:
    """Tensor every projector with ``I_E`` of dimension ``dim_e``."""
    if dim_e < 1:
        raise ValidationError("dim_e must be >= 1")
    new_e = div.dim_e * dim_e
    if div.dim_r * new_e > MAX_DIM:
        raise CapacityError(f"lifted dimension {div.dim_r * new_e} exceeds MAX_DIM={MAX_DIM}")
    return Division(div.label, div.dim_r, div.projectors, new_e)


@dataclass(frozen=True)
class StabilityReport:
    max_offblock: float
    max_commutator: float
    per_value: dict
    tol: float
    passed: bool | None


def stability_check(div: Division, h_r, tol: float = 1e-8, soft: bool = False) -> StabilityReport:
    """Check ``P_mu H_R P_mu' = 0`` for mu != mu', equivalently ``[P_mu, H_R] = 0``.

    ``soft=True`` reports the norms with ``passed=None``.
    """
    h_r = require_hermitian(h_r, name="H_R")
    if h_r.shape[0] != div.dim_r:
        raise DimensionError(f"H_R has dim {h_r.shape[0]}, division acts on dim {div.dim_r}")
    per_value = {}
    max_off = 0.0
    max_comm = 0.0
    for mu, p in div.projectors:
        comm = op_norm(p @ h_r - h_r @ p)
        off = max((op_norm(p @ h_r @ q) for nu, q in div.projectors if nu != mu), default=0.0)
        per_value[mu] = {"commutator": comm, "offblock": off}
        max_off = max(max_off, off)
        max_comm = max(max_comm, comm)
    passed = None if soft else bool(max_comm <= tol)
    return StabilityReport(max_off, max_comm, per_value, tol, passed)


@dataclass(frozen=True)
class DivisionSet:
    """A set W_d of candidate divisions. The trivial division is always a member."""

    divisions: tuple[Division, ...]

    def __post_init__(self):
        divs = tuple(self.divisions)
        if not divs:
            raise ValidationError("a division set needs at least one division to fix dim_r")
        dim_r = divs[0].dim_r
        if any(d.dim_r != dim_r for d in divs):
            raise DimensionError("divisions in a set must share dim_r")
        if not any(d.is_trivial for d in divs):
            divs = divs + (lift(trivial_division(dim_r), divs[0].dim_e) if divs[0].dim_e > 1
                           else trivial_division(dim_r),)
        labels = [d.label for d in divs]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"division labels must be unique, got {labels}")
        object.__setattr__(self, "divisions", divs)

    def __iter__(self):
        return iter(self.divisions)

    def __len__(self) -> int:
        return len(self.divisions)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.divisions)

    @property
    def nontrivial(self) -> tuple[Division, ...]:
        return tuple(d for d in self.divisions if not d.is_trivial)

    def get(self, label: str) -> Division:
        for d in self.divisions:
            if d.label == label:
                return d
        raise KeyError(f"no division labelled {label!r}")

    def lifted(self, dim_e: int) -> "DivisionSet":
        return DivisionSet(tuple(lift(d, dim_e) for d in self.divisions))
