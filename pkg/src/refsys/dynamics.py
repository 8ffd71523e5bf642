"""Total-system Hamiltonians, Schroedinger evolution and the validity condition.

Two system types share one duck-typed interface (``dim_r``, ``dim_e``,
``dim``, ``evolve``, ``evolve_many``, ``propagator``, ``reversed``):

* :class:`TotalSystem` has a single time-independent Hamiltonian
  ``H = H_R (x) I_E + I_R (x) H_E + H_I``.
* :class:`PiecewiseSystem` switches between such Hamiltonians at fixed
  breakpoints. The two-level model and the Hamiltonian-driven measurement
  scheme need this to turn couplings on and off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .divisions import Division, lift
from .errors import DimensionError, UndefinedConditionError, ValidationError
from .linalg import MAX_DIM, SpectralForm, as_operator, as_vector, require_hermitian

__all__ = [
    "TotalSystem",
    "PiecewiseSystem",
    "Tolerances",
    "ZERO_NORM",
    "window_times",
    "evolve",
    "leakage",
    "condition_satisfied",
    "fr_valid_interval",
    "lifted_for",
]

# squared norm below which a component is treated as absent
ZERO_NORM = 1e-24


@dataclass(frozen=True)
class Tolerances:
    """Tolerances for the validity condition and the consistency check.

    ``eps_p`` (probability-assignment error) is tied to ``eps_r``.
    The stability window ``[t, t + tau_s]`` is sampled at ``n_samples``
    interior points plus both endpoints.
    """

    eps_r: float = 1e-3
    eps_d: float = 1e-3
    tau_s: float = 1.0
    n_samples: int = 16

    def __post_init__(self):
        if not self.eps_r >= 0:
            raise ValidationError("eps_r must be >= 0")
        if not self.eps_d >= 0:
            raise ValidationError("eps_d must be >= 0")
        if not self.tau_s > 0:
            raise ValidationError("tau_s must be > 0")
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ValidationError("n_samples must be an integer >= 2")

    @property
    def eps_p(self) -> float:
        return self.eps_r

    def replace(self, **changes) -> "Tolerances":
        fields = {"eps_r": self.eps_r, "eps_d": self.eps_d, "tau_s": self.tau_s,
                  "n_samples": self.n_samples}
        fields.update({k: v for k, v in changes.items() if v is not None})
        return Tolerances(**fields)


def window_times(t: float, tau_s: float, n_samples: int) -> np.ndarray:
    return np.linspace(t, t + tau_s, n_samples + 2)


@dataclass(frozen=True, eq=False)
class TotalSystem:
    """Reference system plus environment with a time-independent Hamiltonian.

    ``h_i`` acts on the total space; ``h_r`` and ``h_e`` on their factors.
    ``None`` means the zero operator.
    """

    dim_r: int
    dim_e: int
    h_r: np.ndarray | None = None
    h_e: np.ndarray | None = None
    h_i: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim_r < 1 or self.dim_e < 1:
            raise ValidationError("dimensions must be >= 1")
        if self.dim_r * self.dim_e > MAX_DIM:
            raise ValidationError(f"total dimension exceeds MAX_DIM={MAX_DIM}")
        for name, dim in (("h_r", self.dim_r), ("h_e", self.dim_e), ("h_i", self.dim)):
            m = getattr(self, name)
            m = np.zeros((dim, dim), dtype=complex) if m is None else require_hermitian(
                as_operator(m, dim), name=name)
            m = np.array(m, dtype=complex)
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_total(cls, h, dim_r: int, dim_e: int) -> "TotalSystem":
        """Wrap a full Hamiltonian; everything is booked as interaction."""
        return cls(dim_r, dim_e, h_i=h)

    @property
    def dim(self) -> int:
        return self.dim_r * self.dim_e

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        h = (np.kron(self.h_r, np.eye(self.dim_e)) + np.kron(np.eye(self.dim_r), self.h_e)
             + self.h_i)
        h.setflags(write=False)
        return h

    @cached_property
    def spectral(self) -> SpectralForm:
        return SpectralForm.from_hermitian(self.hamiltonian)

    def propagator(self, t: float, t0: float) -> np.ndarray:
        dt = float(t) - float(t0)
        key = ("U", dt)
        u = self._cache.get(key)
        if u is None:
            u = self.spectral.unitary(dt)
            u.setflags(write=False)
            if len(self._cache) < 64:
                self._cache[key] = u
        return u

    def evolve(self, psi: np.ndarray, t0: float, t: float) -> np.ndarray:
        return self.spectral.apply(psi, float(t) - float(t0))

    def evolve_many(self, psi: np.ndarray, t0: float, times) -> np.ndarray:
        return self.spectral.apply_many(psi, np.asarray(times, dtype=float) - float(t0))

    def reversed(self, t_end: float = 0.0) -> "TotalSystem":
        """System generated by ``-H``; time origin is irrelevant for constant H."""
        return TotalSystem(self.dim_r, self.dim_e, -self.h_r, -self.h_e, -self.h_i)

    def hamiltonian_at(self, t: float) -> np.ndarray:
        return self.hamiltonian


@dataclass(frozen=True, eq=False)
class PiecewiseSystem:
    """Piecewise-constant Hamiltonian.

    ``pieces[k]`` governs ``[breakpoints[k-1], breakpoints[k])`` with
    ``breakpoints[-1] = -inf`` and ``breakpoints[len] = +inf``, so
    ``len(breakpoints) == len(pieces) - 1``.
    """

    pieces: tuple[TotalSystem, ...]
    breakpoints: tuple[float, ...]

    def __post_init__(self):
        pieces = tuple(self.pieces)
        bps = tuple(float(b) for b in self.breakpoints)
        if len(pieces) != len(bps) + 1:
            raise ValidationError("need exactly one more piece than breakpoints")
        if any(b1 >= b2 for b1, b2 in zip(bps, bps[1:])):
            raise ValidationError("breakpoints must be strictly increasing")
        if any((p.dim_r, p.dim_e) != (pieces[0].dim_r, pieces[0].dim_e) for p in pieces):
            raise DimensionError("all pieces must share dim_r and dim_e")
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "breakpoints", bps)

    @property
    def dim_r(self) -> int:
        return self.pieces[0].dim_r

    @property
    def dim_e(self) -> int:
        return self.pieces[0].dim_e

    @property
    def dim(self) -> int:
        return self.pieces[0].dim

    def piece_index(self, t: float) -> int:
        return int(np.searchsorted(self.breakpoints, t, side="right"))

    def hamiltonian_at(self, t: float) -> np.ndarray:
        return self.pieces[self.piece_index(t)].hamiltonian

    def _legs(self, t0: float, t: float):
        """(piece, start, stop) legs covering t0 -> t in the direction of travel."""
        if t == t0:
            return []
        lo, hi = min(t0, t), max(t0, t)
        cuts = [b for b in self.breakpoints if lo < b < hi]
        pts = [lo, *cuts, hi]
        legs = [(self.pieces[self.piece_index(0.5 * (a + b))], a, b) for a, b in zip(pts, pts[1:])]
        if t < t0:
            legs = [(p, b, a) for p, a, b in reversed(legs)]
        return legs

    def evolve(self, psi: np.ndarray, t0: float, t: float) -> np.ndarray:
        out = np.array(psi, dtype=complex)
        for piece, a, b in self._legs(float(t0), float(t)):
            out = piece.spectral.apply(out, b - a)
        return out

    def evolve_many(self, psi: np.ndarray, t0: float, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, self.dim), dtype=complex)
        order = np.argsort(times, kind="stable")
        cur_t, cur = float(t0), np.array(psi, dtype=complex)
        for idx in order:
            cur = self.evolve(cur, cur_t, times[idx])
            cur_t = float(times[idx])
            out[idx] = cur
        return out

    def propagator(self, t: float, t0: float) -> np.ndarray:
        u = np.eye(self.dim, dtype=complex)
        for piece, a, b in self._legs(float(t0), float(t)):
            u = piece.propagator(b, a) @ u
        return u

    def reversed(self, t_end: float) -> "PiecewiseSystem":
        """Backward-running system: time ``s`` of the result maps to ``t_end - s`` with ``-H``."""
        pieces = tuple(p.reversed() for p in reversed(self.pieces))
        bps = tuple(t_end - b for b in reversed(self.breakpoints))
        return PiecewiseSystem(pieces, bps)


def evolve(system, psi, t0: float, t: float) -> np.ndarray:
    """``U(t, t0) psi``."""
    psi = as_vector(psi, system.dim)
    return system.evolve(psi, t0, t)


def leakage(system, div: Division, mu: str, psi, t: float, tau_s: float,
            n_samples: int = 16) -> float:
    """Largest weight that the normalized ``P_mu psi`` leaks out of its subspace
    over the sampled window ``[t, t + tau_s]``.

    Raises
    ------
    UndefinedConditionError
        If ``P_mu psi`` has zero norm.
    """
    psi = as_vector(psi, system.dim)
    div = lifted_for(div, system)
    if div.is_trivial:
        return 0.0
    comp = div.apply(mu, psi)
    norm2 = float(np.vdot(comp, comp).real)
    if norm2 <= ZERO_NORM:
        raise UndefinedConditionError(f"component of value {mu!r} has zero norm")
    comp = comp / np.sqrt(norm2)
    states = system.evolve_many(comp, t, window_times(t, tau_s, n_samples))
    q = div.complement_r(mu)
    dim_r = div.dim_r
    out = np.einsum("ab,nbj->naj", q, states.reshape(-1, dim_r, div.dim_e))
    leaked = np.sum(np.abs(out) ** 2, axis=(1, 2))
    return float(np.clip(leaked.max(), 0.0, 1.0))


def condition_satisfied(system, div: Division, mu: str, psi, t: float,
                        tol: Tolerances) -> bool:
    return leakage(system, div, mu, psi, t, tol.tau_s, tol.n_samples) <= tol.eps_r


def fr_valid_interval(system, div: Division, mu0: str, psi, t0: float, t_max: float,
                      tol: Tolerances, step: float | None = None) -> float | None:
    """Largest grid time ``t <= t_max`` for which the frame of ``div`` stays valid.

    The weight of ``psi(t')`` outside the ``mu0`` subspace must stay within
    ``eps_r`` for every sampled ``t'`` in ``[t0, t + tau_s]``. The grid step
    defaults to the window sampling step. Returns ``None`` when the frame is
    not valid even at ``t0``.
    """
    psi = as_vector(psi, system.dim)
    div = lifted_for(div, system)
    if div.is_trivial:
        return float(t_max)
    psi = psi / np.linalg.norm(psi)
    if step is None:
        step = tol.tau_s / (tol.n_samples + 1)
    n_t = int(np.floor((t_max - t0) / step + 1e-9))
    grid = t0 + step * np.arange(n_t + 1)
    n_extra = int(np.ceil(tol.tau_s / step - 1e-9))
    sample = t0 + step * np.arange(n_t + n_extra + 1)
    states = system.evolve_many(psi, t0, sample)
    q = div.complement_r(mu0)
    out = np.einsum("ab,nbj->naj", q, states.reshape(-1, div.dim_r, div.dim_e))
    leaked = np.sum(np.abs(out) ** 2, axis=(1, 2))
    running = np.maximum.accumulate(leaked)
    best = None
    for t in grid:
        # all samples up to t + tau_s
        last = np.searchsorted(sample, t + tol.tau_s + 1e-12, side="right") - 1
        if running[last] <= tol.eps_r:
            best = float(t)
        else:
            break
    return best


def lifted_for(div: Division, system) -> Division:
    """Return ``div`` acting on the system's total space, lifting an H_R-only division."""
    if div.dim_r == system.dim_r and div.dim_e == system.dim_e:
        return div
    if div.dim_r == system.dim_r and div.dim_e == 1:
        return lift(div, system.dim_e)
    raise DimensionError(
        f"division acts on ({div.dim_r}, {div.dim_e}), system is ({system.dim_r}, {system.dim_e})")
