"""Von Neumann measurements and frame-jump trajectories.

The reference system is a pointer with a ready state ``|0>`` and one
pointer state ``|mu(a)> = |a + 1>`` per outcome, so ``dim_R = n_a + 1``.
The measured system S is the first factor of the environment,
``H_E = H_S (x) H_B``. The pre-measurement maps ``|0>|a>`` to
``|mu(a)>|a>``.

Trajectories draw one uniform number per scheduled interval from
``numpy.random.default_rng(seed)`` and pick the outcome whose cumulative
probability (in division label order, complement last) first exceeds it.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .branching import BranchTree, complement_label, split, tree_density
from .divisions import Division, basis_division
from .dynamics import ZERO_NORM, PiecewiseSystem, Tolerances, TotalSystem, leakage, lifted_for
from .errors import UndefinedConditionError, ValidationError
from .linalg import as_operator, as_vector, partial_trace_env, partial_trace_rs

__all__ = [
    "MeasurementScheme",
    "Interval",
    "SegmentRecord",
    "FrTrajectory",
    "OutcomeRow",
    "MeasurementResult",
    "transition_operator",
    "jump_probability",
    "run_measurement",
    "run_fr_trajectory",
    "enumerate_fr_outcomes",
    "sample_fr_outcomes",
    "TRIVIAL_VALUE",
]

TRIVIAL_VALUE = "I"
NORM_TOL = 1e-10


def _shift(n: int, k: int) -> np.ndarray:
    """``X^k`` with ``X|j> = |j+1 mod n>``."""
    return np.roll(np.eye(n, dtype=complex), k, axis=0)


@dataclass(frozen=True, eq=False)
class MeasurementScheme:
    """Pointer measurement of an observable with ``n_outcomes`` eigenvectors.

    Parameters
    ----------
    n_outcomes : int
        Number of outcomes ``a = 0 .. n_a - 1``.
    basis : array, optional
        Columns are the eigenvectors ``|a>`` of the observable on S
        (computational basis by default).
    dim_b : int
        Dimension of a spectator environment factor B.
    kind : {"unitary", "hamiltonian"}
        ``"unitary"``: the interaction generates exactly
        ``V = sum_a X^{a+1} (x) |a><a|`` during ``[t_on, t_on + 1]``.
        ``"hamiltonian"``: ``H_I = g sum_a (|0><mu(a)| + h.c.) (x) |a><a|``
        acts for ``pi / (2 g)``, rotating ``|0>`` into ``-i |mu(a)>``.
    """

    n_outcomes: int
    basis: np.ndarray | None = None
    dim_b: int = 1
    kind: str = "unitary"
    g: float = 1.0
    t_on: float = 0.0

    def __post_init__(self):
        if self.n_outcomes < 1:
            raise ValidationError("need at least one outcome")
        if self.kind not in ("unitary", "hamiltonian"):
            raise ValidationError(f"unknown scheme kind {self.kind!r}")
        if self.dim_b < 1:
            raise ValidationError("dim_b must be >= 1")
        if not self.g > 0:
            raise ValidationError("g must be > 0")
        b = np.eye(self.n_outcomes, dtype=complex) if self.basis is None else as_operator(
            self.basis, self.n_outcomes)
        if np.max(np.abs(b.conj().T @ b - np.eye(self.n_outcomes))) > 1e-10:
            raise ValidationError("observable basis is not orthonormal")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim_r(self) -> int:
        return self.n_outcomes + 1

    @property
    def dim_s(self) -> int:
        return self.n_outcomes

    @property
    def dim_e(self) -> int:
        return self.n_outcomes * self.dim_b

    @property
    def dim(self) -> int:
        return self.dim_r * self.dim_e

    @property
    def duration(self) -> float:
        return 1.0 if self.kind == "unitary" else np.pi / (2 * self.g)

    @property
    def t_off(self) -> float:
        return self.t_on + self.duration

    def pointer_label(self, a: int) -> str:
        return str(a + 1)

    @property
    def ready_label(self) -> str:
        return "0"

    @property
    def pointer_division(self) -> Division:
        return basis_division("pointer", self.dim_r, labels=[str(k) for k in range(self.dim_r)])

    def eigenstate(self, a: int) -> np.ndarray:
        return self.basis[:, a]

    def _outcome_projector_e(self, a: int) -> np.ndarray:
        v = self.eigenstate(a)
        return np.kron(np.outer(v, v.conj()), np.eye(self.dim_b))

    def unitary(self) -> np.ndarray:
        """The pre-measurement ``V = sum_a X^{a+1} (x) |a><a| (x) I_B``."""
        return sum(np.kron(_shift(self.dim_r, a + 1), self._outcome_projector_e(a))
                   for a in range(self.n_outcomes))

    def interaction(self) -> np.ndarray:
        """Hermitian generator that acts during ``[t_on, t_off]``."""
        if self.kind == "hamiltonian":
            h = np.zeros((self.dim, self.dim), dtype=complex)
            for a in range(self.n_outcomes):
                flip = np.zeros((self.dim_r, self.dim_r), dtype=complex)
                flip[0, a + 1] = flip[a + 1, 0] = self.g
                h += np.kron(flip, self._outcome_projector_e(a))
            return h
        # exp(-i G) = X^k with G built from the eigenphases of X^k in (-pi, pi]
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for a in range(self.n_outcomes):
            w, v = np.linalg.eig(_shift(self.dim_r, a + 1))
            phases = -np.angle(w)
            gen = v @ np.diag(phases) @ np.linalg.inv(v)
            h += np.kron(0.5 * (gen + gen.conj().T), self._outcome_projector_e(a))
        return h

    def system(self) -> PiecewiseSystem:
        """Free evolution, then the interaction on ``[t_on, t_off]``, then free evolution."""
        free = TotalSystem(self.dim_r, self.dim_e)
        on = TotalSystem(self.dim_r, self.dim_e, h_i=self.interaction())
        return PiecewiseSystem((free, on, free), (self.t_on, self.t_off))

    def initial_state(self, c, env_b=None) -> np.ndarray:
        """``|0> (x) sum_a c_a |a> (x) |b>`` (``|b>`` defaults to the first basis vector of B)."""
        c = np.asarray(c, dtype=complex)
        if c.shape != (self.n_outcomes,):
            raise ValidationError(f"need {self.n_outcomes} amplitudes, got {c.shape}")
        if abs(np.vdot(c, c).real - 1.0) > NORM_TOL:
            raise ValidationError("amplitudes are not normalized")
        b = np.zeros(self.dim_b, dtype=complex)
        b[0] = 1.0
        if env_b is not None:
            b = as_vector(env_b, self.dim_b)
        ready = np.zeros(self.dim_r, dtype=complex)
        ready[0] = 1.0
        return np.kron(ready, np.kron(self.basis @ c, b))

    def expected_branch(self, a: int, env_b=None) -> np.ndarray:
        """``|mu(a)> |a> |b>``."""
        c = np.zeros(self.n_outcomes, dtype=complex)
        c[a] = 1.0
        ready = self.initial_state(c, env_b)
        return np.kron(_shift(self.dim_r, a + 1), np.eye(self.dim_e)) @ ready


def transition_operator(div_next: Division, mu_next: str, u_step, div_prev: Division,
                        mu_prev: str) -> np.ndarray:
    """``L = P_mu_next U P_mu_prev`` as a dense matrix on the space of ``u_step``."""
    u = as_operator(u_step)
    dim = u.shape[0]
    mats = []
    for div, mu in ((div_next, mu_next), (div_prev, mu_prev)):
        dim_e = dim // div.dim_r
        if dim_e * div.dim_r != dim:
            raise ValidationError(f"division {div.label!r} does not fit dimension {dim}")
        mats.append(np.kron(div.projector_r(mu), np.eye(dim_e)))
    return mats[0] @ u @ mats[1]


def jump_probability(psi, L) -> float:
    """``<psi|L^dag L|psi> / <psi|psi>``."""
    psi = as_vector(psi)
    n2 = float(np.vdot(psi, psi).real)
    if n2 <= ZERO_NORM:
        raise UndefinedConditionError("jump from a zero-norm component")
    x = as_operator(L, psi.size) @ psi
    return float(np.clip(np.vdot(x, x).real / n2, 0.0, 1.0))


@dataclass
class OutcomeRow:
    outcome: int
    value: str
    probability: float
    branch_error: float
    reduced_error: float

    def as_dict(self) -> dict:
        return {"outcome": self.outcome, "value": self.value, "probability": self.probability,
                "branch_error": self.branch_error, "reduced_error": self.reduced_error}


@dataclass
class MeasurementResult:
    rows: list[OutcomeRow]
    unitarity_residual: float
    density_residual: float
    max_pointer_overlap: float
    tree: BranchTree = field(repr=False)

    @property
    def probabilities(self) -> dict[int, float]:
        return {r.outcome: r.probability for r in self.rows}

    def as_dict(self) -> dict:
        return {"outcomes": [r.as_dict() for r in self.rows],
                "unitarity_residual": self.unitarity_residual,
                "density_residual": self.density_residual,
                "max_pointer_overlap": self.max_pointer_overlap}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outcome", "value", "probability"])
        for r in self.rows:
            w.writerow([r.outcome, r.value, f"{r.probability:.12g}"])
        return buf.getvalue()


def run_measurement(scheme: MeasurementScheme, c, pointer_division: Division | None = None,
                    tol: Tolerances | None = None, env_b=None) -> MeasurementResult:
    """Run the pre-measurement and split on the pointer division afterwards.

    Step one (``t_on -> t_off``) is unitary; step two is the split of
    ``Psi(t_off)`` into pointer branches. Each row compares the normalized
    branch with ``|mu(a)>|a>`` up to a global phase and the reduced state
    of S with ``|a><a|``.
    """
    tol = tol or Tolerances()
    div = lifted_for(pointer_division or scheme.pointer_division, scheme.system())
    system = scheme.system()
    psi0 = scheme.initial_state(c, env_b)
    u = system.propagator(scheme.t_off, scheme.t_on)
    unitarity = float(np.max(np.abs(u.conj().T @ u - np.eye(system.dim))))

    tree = BranchTree(system, psi0, scheme.t_on)
    tree.advance(scheme.t_off)
    split(tree, 0, scheme.t_off, div, tol)
    by_value = {leaf.path.steps[-1].m: leaf for leaf in tree.leaves if leaf.path.steps}

    rows = []
    rho_expected = np.zeros((system.dim, system.dim), dtype=complex)
    pointers = []
    for a in range(scheme.n_outcomes):
        mu = scheme.pointer_label(a)
        leaf = by_value.get(mu)
        vec = leaf.vector if leaf is not None else np.zeros(system.dim, dtype=complex)
        if leaf is None and len(tree.leaves) == 1 and div.weight(mu, tree.leaves[0].vector) > 0.5:
            vec = tree.leaves[0].vector  # a single outcome: nothing to split
        p = float(np.vdot(vec, vec).real)
        expected = scheme.expected_branch(a, env_b)
        pointers.append(expected)
        rho_expected += p * np.outer(expected, expected.conj())
        if p > ZERO_NORM:
            unit = vec / np.sqrt(p)
            branch_err = 1.0 - abs(np.vdot(expected, unit))
            rho_re = partial_trace_rs(np.outer(unit, unit.conj()), scheme.dim_r, scheme.dim_e)
            rho_s = partial_trace_env(rho_re, scheme.dim_s, scheme.dim_b)
            v = scheme.eigenstate(a)
            red_err = float(np.max(np.abs(rho_s - np.outer(v, v.conj()))))
        else:
            branch_err, red_err = 0.0, 0.0
        rows.append(OutcomeRow(a, mu, p, float(branch_err), red_err))
    density = float(np.max(np.abs(tree_density(tree) - rho_expected)))
    overlap = max((abs(np.vdot(pointers[i], pointers[j]))
                   for i in range(len(pointers)) for j in range(i)), default=0.0)
    return MeasurementResult(rows, unitarity, density, float(overlap), tree)


# --- frame-jump trajectories ---

@dataclass(frozen=True)
class Interval:
    """Validity interval ``[start, stop]`` of the frame of ``division``."""

    start: float
    stop: float
    division: Division

    def __post_init__(self):
        if self.stop < self.start:
            raise ValidationError("interval ends before it starts")


@dataclass
class SegmentRecord:
    start: float
    stop: float
    division: str
    value: str
    probability: float
    vector: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "division": self.division,
                "value": self.value, "probability": self.probability}


@dataclass
class FrTrajectory:
    seed: int | None
    records: list[SegmentRecord]

    @property
    def outcomes(self) -> tuple[str, ...]:
        return tuple(r.value for r in self.records)

    @property
    def probability(self) -> float:
        return float(np.prod([r.probability for r in self.records]))

    def as_dict(self) -> dict:
        return {"seed": self.seed, "outcomes": list(self.outcomes),
                "probability": self.probability,
                "records": [r.as_dict() for r in self.records]}


def _normalize_schedule(schedule: Iterable, system) -> list[Interval]:
    out = []
    for item in schedule:
        iv = item if isinstance(item, Interval) else Interval(float(item[0]), float(item[1]), item[2])
        out.append(Interval(iv.start, iv.stop, lifted_for(iv.division, system)))
    for a, b in zip(out, out[1:]):
        if b.start < a.stop:
            raise ValidationError("schedule intervals must be ordered and non-overlapping")
    return out


def _branch_options(system, iv: Interval, psi: np.ndarray, tol: Tolerances):
    """Outcomes of the jump into ``iv``: (labels, probabilities, normalized components).

    Values whose condition holds over the interval are offered; the rest of
    the vector is kept as one complement outcome. When nothing qualifies the
    segment is described in the trivial frame.
    """
    div = iv.division
    n2 = float(np.vdot(psi, psi).real)
    window = iv.stop - iv.start if iv.stop > iv.start else tol.tau_s
    selected = []
    if not div.is_trivial:
        for mu in div.labels:
            if div.weight(mu, psi) <= ZERO_NORM * max(n2, 1.0):
                continue
            if leakage(system, div, mu, psi, iv.start, window, tol.n_samples) <= tol.eps_r:
                selected.append(mu)
    if not selected:
        return [TRIVIAL_VALUE], np.array([1.0]), [psi / np.sqrt(n2)]
    labels, probs, comps = [], [], []
    rest = psi.copy()
    for mu in selected:
        comp = div.apply(mu, psi)
        rest = rest - comp
        labels.append(mu)
        probs.append(float(np.vdot(comp, comp).real) / n2)
        comps.append(comp)
    w_rest = float(np.vdot(rest, rest).real) / n2
    if w_rest > ZERO_NORM:
        labels.append(complement_label(selected))
        probs.append(w_rest)
        comps.append(rest)
    probs = np.array(probs)
    comps = [c / np.sqrt(p * n2) if p > 0 else c for c, p in zip(comps, probs)]
    return labels, probs, comps


def _pick(probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    k = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(k, probs.size - 1)


def run_fr_trajectory(system, schedule: Sequence, psi0, seed: int | None, t0: float = 0.0,
                      tol: Tolerances | None = None) -> FrTrajectory:
    """Sample one history: unitary evolution inside intervals, a jump at each interval start.

    The jump into interval ``i + 1`` applies ``L = P_mu' U(t_{i+1}, t_i^e) P_mu``
    to the current component and is taken with probability ``||L psi||^2``.
    """
    tol = tol or Tolerances()
    ivs = _normalize_schedule(schedule, system)
    psi = as_vector(psi0, system.dim)
    psi = psi / np.linalg.norm(psi)
    rng = np.random.default_rng(seed)
    t = float(t0)
    records = []
    for iv in ivs:
        psi = system.evolve(psi, t, iv.start)
        labels, probs, comps = _branch_options(system, iv, psi, tol)
        k = _pick(probs, rng.random())
        psi = system.evolve(comps[k], iv.start, iv.stop)
        records.append(SegmentRecord(iv.start, iv.stop, iv.division.label, labels[k],
                                     float(probs[k]), psi))
        t = iv.stop
    return FrTrajectory(seed, records)


def enumerate_fr_outcomes(system, schedule: Sequence, psi0, t0: float = 0.0,
                          tol: Tolerances | None = None) -> dict[tuple[str, ...], float]:
    """Exact probability of every outcome sequence, by walking all branches."""
    tol = tol or Tolerances()
    ivs = _normalize_schedule(schedule, system)
    psi = as_vector(psi0, system.dim)
    out: dict[tuple[str, ...], float] = {}

    def walk(k, psi, t, prefix, weight):
        if k == len(ivs):
            out[prefix] = out.get(prefix, 0.0) + weight
            return
        iv = ivs[k]
        psi = system.evolve(psi, t, iv.start)
        labels, probs, comps = _branch_options(system, iv, psi, tol)
        for lab, p, c in zip(labels, probs, comps):
            if p > 0:
                walk(k + 1, system.evolve(c, iv.start, iv.stop), iv.stop, prefix + (lab,), weight * p)

    walk(0, psi / np.linalg.norm(psi), float(t0), (), 1.0)
    return out


def sample_fr_outcomes(system, schedule: Sequence, psi0, seeds: Iterable[int], t0: float = 0.0,
                       tol: Tolerances | None = None) -> Counter:
    """Outcome counts over many seeds.

    Gives the same outcome per seed as :func:`run_fr_trajectory`; the branch
    options of each outcome prefix are computed once and reused.
    """
    tol = tol or Tolerances()
    ivs = _normalize_schedule(schedule, system)
    psi0 = as_vector(psi0, system.dim)
    psi0 = psi0 / np.linalg.norm(psi0)
    cache: dict[tuple, tuple] = {}

    def options(prefix):
        hit = cache.get(prefix)
        if hit is None:
            k = len(prefix)
            if k == 0:
                psi, t = psi0, float(t0)
            else:
                ends = options(prefix[:-1])[2]
                psi, t = ends[prefix[-1]], ivs[k - 1].stop
            iv = ivs[k]
            psi = system.evolve(psi, t, iv.start)
            labels, probs, comps = _branch_options(system, iv, psi, tol)
            ends = [system.evolve(c, iv.start, iv.stop) for c in comps]
            hit = (labels, probs, ends)
            cache[prefix] = hit
        return hit

    counts: Counter = Counter()
    for seed in seeds:
        rng = np.random.default_rng(seed)
        idx: tuple[int, ...] = ()
        labels_out = []
        for _ in ivs:
            labels, probs, _ = options(idx)
            k = _pick(probs, rng.random())
            idx = idx + (k,)
            labels_out.append(labels[k])
        counts[tuple(labels_out)] += 1
    return counts
