"""Two-level reference system coupled to a chaotic environment.

Inside the windows ``[t_i, t_i^e]`` the interaction is block diagonal,
``H_I = |1><1| (x) H_1 + |2><2| (x) H_2``, so each level ``k`` carries its
own environment Hamiltonian ``H_E + H_k``. Between windows a term
``g sigma_x (x) B`` mixes the two levels and no frame of the level
division is valid.

Peres fidelity ``M(t) = |<psi|exp(iHt) exp(-iH0t)|psi>|^2`` measures how
fast the two environment evolutions separate; its decay time ``tau_d`` sets
how long the windows must be for the branches to decohere.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .divisions import Division, basis_division
from .dynamics import PiecewiseSystem, TotalSystem
from .errors import ValidationError
from .linalg import MAX_DIM, PAULI_X, SpectralForm, require_hermitian

__all__ = [
    "ENV_KINDS",
    "build_env",
    "level_spacing_ratio",
    "TwoLevelScenario",
    "make_scenario",
    "analytic_branch",
    "d_phi",
    "daa_model",
    "FidelityFit",
    "peres_fidelity",
    "tau_policy",
    "GUE_SPACING_RATIO",
]

ENV_KINDS = ("gue", "spin-chain")
# mean consecutive level-spacing ratio of the GUE (Atas et al. surmise)
GUE_SPACING_RATIO = 0.5996


def build_env(kind: str, dim_e: int, strength: float = 1.0, seed: int = 0) -> np.ndarray:
    """Seeded Hermitian environment operator.

    ``"gue"``: complex Gaussian off-diagonal entries with ``E|H_ij|^2 = s^2``
    and real Gaussian diagonal entries of variance ``s^2``, where
    ``s = strength / (2 sqrt(dim_e))``; the spectrum then fills the
    semicircle ``[-strength, strength]``.

    ``"spin-chain"``: open mixed-field Ising chain on ``log2(dim_e)`` spins,
    ``sum Z_i Z_{i+1} + 1.05 sum X_i + 0.5 sum Z_i`` plus seeded site
    disorder of width 0.1 in the longitudinal field, times ``strength``.
    """
    if dim_e < 2:
        raise ValidationError("dim_e must be >= 2")
    if dim_e > MAX_DIM:
        raise ValidationError(f"dim_e exceeds MAX_DIM={MAX_DIM}")
    rng = np.random.default_rng(seed)
    if kind == "gue":
        a = rng.standard_normal((dim_e, dim_e)) + 1j * rng.standard_normal((dim_e, dim_e))
        s = strength / (2.0 * np.sqrt(dim_e))
        return s * 0.5 * (a + a.conj().T)
    if kind == "spin-chain":
        n = int(round(np.log2(dim_e)))
        if 2 ** n != dim_e:
            raise ValidationError("spin-chain environment needs dim_e to be a power of 2")
        return strength * _ising_chain(n, 1.0, 1.05, 0.5, rng.normal(0.0, 0.1, n))
    raise ValidationError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")


def _site_op(op: np.ndarray, i: int, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def _ising_chain(n: int, j: float, hx: float, hz: float, disorder) -> np.ndarray:
    z = np.diag([1.0, -1.0]).astype(complex)
    x = PAULI_X
    h = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for i in range(n - 1):
        h += j * _site_op(z, i, n) @ _site_op(z, i + 1, n)
    for i in range(n):
        h += hx * _site_op(x, i, n) + (hz + disorder[i]) * _site_op(z, i, n)
    return h


def level_spacing_ratio(eigenvalues, bulk: float = 0.8) -> float:
    """Mean of ``min(s_n, s_n+1) / max(s_n, s_n+1)`` over the central ``bulk`` fraction."""
    w = np.sort(np.asarray(eigenvalues, dtype=float))
    cut = int(round(w.size * (1 - bulk) / 2))
    w = w[cut:w.size - cut] if cut else w
    s = np.diff(w)
    s1, s2 = s[:-1], s[1:]
    den = np.maximum(s1, s2)
    ok = den > 0
    return float(np.mean(np.minimum(s1, s2)[ok] / den[ok]))


@dataclass(frozen=True, eq=False)
class TwoLevelScenario:
    """Two windows ``[t0, t0e]`` and ``[t1, t1e]`` separated by a mixing stretch.

    ``h_ie`` holds ``(H_1, H_2)``. ``off_operator`` is ``B`` in the
    off-window term ``g sigma_x (x) B``. The level division has values
    ``"1"`` and ``"2"``.
    """

    energies: tuple[float, float]
    h_e: np.ndarray
    h_ie: tuple[np.ndarray, np.ndarray]
    windows: tuple[tuple[float, float], tuple[float, float]]
    g: float = 0.5
    off_operator: np.ndarray | None = None
    seed: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        h_e = require_hermitian(self.h_e, name="H_E")
        dim_e = h_e.shape[0]
        h_ie = tuple(require_hermitian(h, name=f"H_{k + 1}") for k, h in enumerate(self.h_ie))
        if len(h_ie) != 2 or any(h.shape != h_e.shape for h in h_ie):
            raise ValidationError("need two interaction blocks of the environment's dimension")
        b = np.eye(dim_e, dtype=complex) if self.off_operator is None else require_hermitian(
            self.off_operator, name="B")
        (t0, t0e), (t1, t1e) = self.windows
        if not t0 < t0e < t1 < t1e:
            raise ValidationError("windows must satisfy t0 < t0e < t1 < t1e")
        object.__setattr__(self, "h_e", h_e)
        object.__setattr__(self, "h_ie", h_ie)
        object.__setattr__(self, "off_operator", b)
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))

    @property
    def dim_e(self) -> int:
        return self.h_e.shape[0]

    @property
    def dim_r(self) -> int:
        return 2

    @property
    def dim(self) -> int:
        return 2 * self.dim_e

    @property
    def h_r(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    @property
    def division(self) -> Division:
        return basis_division("level", 2)

    def block_interaction(self) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for k in range(2):
            proj = np.zeros((2, 2))
            proj[k, k] = 1.0
            h += np.kron(proj, self.h_ie[k])
        return h

    def window_system(self) -> TotalSystem:
        if "window" not in self._cache:
            self._cache["window"] = TotalSystem(2, self.dim_e, self.h_r, self.h_e,
                                                self.block_interaction())
        return self._cache["window"]

    def mixing_system(self) -> TotalSystem:
        if "mixing" not in self._cache:
            h_i = self.block_interaction() + self.g * np.kron(PAULI_X, self.off_operator)
            self._cache["mixing"] = TotalSystem(2, self.dim_e, self.h_r, self.h_e, h_i)
        return self._cache["mixing"]

    def system(self) -> PiecewiseSystem:
        """Block form up to ``t0e``, mixing until ``t1``, block form until ``t1e``, mixing after."""
        key = "system"
        if key not in self._cache:
            (_, t0e), (t1, t1e) = self.windows
            win, mix = self.window_system(), self.mixing_system()
            self._cache[key] = PiecewiseSystem((win, mix, win, mix), (t0e, t1, t1e))
        return self._cache[key]

    def effective(self, m: int) -> SpectralForm:
        """Spectral form of ``H_E + H_m`` (``m`` in {1, 2})."""
        key = ("eff", m)
        if key not in self._cache:
            self._cache[key] = SpectralForm.from_hermitian(self.h_e + self.h_ie[m - 1])
        return self._cache[key]

    def initial_state(self, r, phi0) -> np.ndarray:
        """Product vector ``|R> (x) |phi0>``."""
        r = np.asarray(r, dtype=complex)
        phi0 = np.asarray(phi0, dtype=complex)
        return np.kron(r, phi0)


def make_scenario(dim_e: int, seed: int = 0, kind: str = "gue", env_strength: float = 1.0,
                  coupling: float = 1.0, energies=(0.0, 1.0), windows=((0.0, 10.0), (12.0, 22.0)),
                  g: float = 0.5, off: str = "identity") -> TwoLevelScenario:
    """Scenario with independent seeded blocks ``H_E``, ``H_1``, ``H_2`` (and ``B`` if ``off="random"``).

    ``H_1`` and ``H_2`` are drawn like ``H_E`` with strength ``coupling``.
    """
    seeds = np.random.SeedSequence(seed).generate_state(4)
    h_e = build_env(kind, dim_e, env_strength, int(seeds[0]))
    h1 = build_env("gue", dim_e, coupling, int(seeds[1]))
    h2 = build_env("gue", dim_e, coupling, int(seeds[2]))
    if off == "identity":
        b = None
    elif off == "random":
        b = build_env("gue", dim_e, 1.0, int(seeds[3]))
    else:
        raise ValidationError(f"unknown off-window operator {off!r}")
    return TwoLevelScenario(tuple(energies), h_e, (h1, h2), tuple(map(tuple, windows)), g, b, seed)


def _env_part(psi0: np.ndarray, m: int, dim_e: int) -> np.ndarray:
    return np.asarray(psi0, dtype=complex).reshape(2, dim_e)[m - 1]


def _phi_second(sc: TwoLevelScenario, psi0, m0: int, m1: int, t: float) -> np.ndarray:
    (t0, t0e), (t1, t1e) = sc.windows
    if not t1 <= t <= t1e:
        raise ValidationError(f"t={t} is outside the second window [{t1}, {t1e}]")
    phi = _env_part(psi0, m0, sc.dim_e)
    phi = sc.effective(m0).apply(phi, t0e - t0)
    # <m1| U(t1, t0e) |m0>, block of the full mixing propagator
    u = sc.mixing_system().propagator(t1, t0e)
    block = u.reshape(2, sc.dim_e, 2, sc.dim_e)[m1 - 1, :, m0 - 1, :]
    phi = block @ phi
    return sc.effective(m1).apply(phi, t - t1)


def _theta(sc: TwoLevelScenario, m0: int, m1: int, t: float) -> float:
    (t0, t0e), (t1, _) = sc.windows
    return sc.energies[m1 - 1] * (t - t1) + sc.energies[m0 - 1] * (t0e - t0)


def analytic_branch(sc: TwoLevelScenario, psi0, m_path, t: float) -> np.ndarray:
    """Component of path ``(m0, m1)`` at ``t`` in the second window, in closed form.

    ``exp(-i Theta) |m1> (x) U^E_m1(t, t1) U_m1m0(t1, t0e) U^E_m0(t0e, t0) |phi_m0(t0)>``
    with ``Theta = E_m1 (t - t1) + E_m0 (t0e - t0)``.
    """
    m0, m1 = (int(m) for m in m_path)
    phi = _phi_second(sc, psi0, m0, m1, t)
    ket = np.zeros(2, dtype=complex)
    ket[m1 - 1] = 1.0
    return np.exp(-1j * _theta(sc, m0, m1, t)) * np.kron(ket, phi)


def d_phi(sc: TwoLevelScenario, psi0, m0: int, m0p: int, m: int, t: float) -> complex:
    """``<phi_{m0 m}(t)|phi_{m0' m}(t)>``."""
    a = _phi_second(sc, psi0, int(m0), int(m), t)
    b = _phi_second(sc, psi0, int(m0p), int(m), t)
    return complex(np.vdot(a, b))


def daa_model(sc: TwoLevelScenario, psi0, alpha, alpha_p, m: int, t: float) -> complex:
    """``D^m_{alpha alpha'} = delta delta exp(-i dTheta) D_phi`` with ``dTheta = Theta_a' - Theta_a``."""
    (m0, m1), (m0p, m1p) = alpha, alpha_p
    if int(m1) != int(m) or int(m1p) != int(m):
        return 0j
    dtheta = _theta(sc, m0p, m1p, t) - _theta(sc, m0, m1, t)
    return complex(np.exp(-1j * dtheta) * d_phi(sc, psi0, m0, m0p, m, t))


@dataclass
class FidelityFit:
    """Fidelity series and its exponential fit ``ln M = c - t / tau_d``.

    ``tau_d`` is ``None`` when ``M`` never drops below 0.9 (no decay).
    """

    times: np.ndarray
    m: np.ndarray
    tau_d: float | None
    r2: float | None
    window: tuple[float, float] | None
    plateau: float
    intercept: float | None = None

    @property
    def decayed(self) -> bool:
        return self.tau_d is not None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "M"])
        for t, m in zip(self.times, self.m):
            w.writerow([f"{t:.12g}", f"{m:.12g}"])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"tau_d": self.tau_d, "r2": self.r2,
                "window": list(self.window) if self.window else None,
                "plateau": self.plateau, "intercept": self.intercept,
                "n_points": int(self.times.size)}


def peres_fidelity(h0, h, psi0, grid, upper: float = 0.95, lower_floor: float = 0.1,
                   plateau_factor: float = 3.0, tail: float = 0.25) -> FidelityFit:
    """``M(t) = |<psi0|exp(iHt) exp(-iH0 t)|psi0>|^2`` on ``grid`` with an exponential fit.

    The fit uses grid points from the first one with ``M <= upper`` until ``M``
    falls below ``max(lower_floor, plateau_factor * plateau)``, where the
    plateau is the mean of ``M`` over the last ``tail`` of the grid. ``R^2``
    is computed for ``ln M``.
    """
    h0 = require_hermitian(h0, name="H0")
    h = require_hermitian(h, name="H")
    if h0.shape != h.shape:
        raise ValidationError("H0 and H differ in dimension")
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValidationError("psi0 must be normalized")
    grid = np.asarray(grid, dtype=float)
    a = SpectralForm.from_hermitian(h0).apply_many(psi0, grid)
    b = SpectralForm.from_hermitian(h).apply_many(psi0, grid)
    m = np.clip(np.abs(np.sum(b.conj() * a, axis=1)) ** 2, 0.0, 1.0)
    m[grid == 0.0] = 1.0
    n_tail = max(1, int(round(tail * grid.size)))
    plateau = float(np.mean(m[-n_tail:]))
    if m.min() >= 0.9:
        return FidelityFit(grid, m, None, None, None, plateau)
    lower = max(lower_floor, plateau_factor * plateau)
    start = int(np.argmax(m <= upper))
    below = np.flatnonzero(m[start:] < lower)
    stop = start + (int(below[0]) if below.size else m.size - start)
    if stop - start < 3:
        return FidelityFit(grid, m, None, None, (float(grid[start]), float(grid[stop - 1])), plateau)
    t, y = grid[start:stop], np.log(m[start:stop])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    tau = float(-1.0 / slope) if slope < 0 else None
    return FidelityFit(grid, m, tau, r2, (float(t[0]), float(t[-1])), plateau, float(intercept))


def tau_policy(fit: FidelityFit | float, factor: float = 10.0) -> float:
    """Stability window ``tau_s = factor * tau_d``; ``factor`` must exceed 1."""
    if not factor > 1:
        raise ValidationError("factor must be > 1")
    tau_d = fit.tau_d if isinstance(fit, FidelityFit) else fit
    if tau_d is None or not np.isfinite(tau_d) or tau_d <= 0:
        raise ValidationError("decay time is undefined")
    return float(factor * tau_d)
