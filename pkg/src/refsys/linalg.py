"""Dense complex linear algebra on the composite space H_R (x) H_E.

Vectors and operators are plain ``numpy`` arrays of dtype ``complex128``.
Composite indices follow the row-major convention
``i_total = i_R * dim_E + i_E``, which is what ``np.kron`` produces.
Units are hbar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DimensionError, ValidationError

__all__ = [
    "MAX_DIM",
    "HERMITIAN_TOL",
    "SpectralForm",
    "as_vector",
    "as_operator",
    "is_hermitian",
    "require_hermitian",
    "op_norm",
    "commutator",
    "tensor",
    "propagator",
    "partial_trace_env",
    "partial_trace_rs",
    "random_state",
    "basis_vector",
    "PAULI_X",
    "PAULI_Y",
    "PAULI_Z",
]

MAX_DIM = 4096
HERMITIAN_TOL = 1e-10

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def as_vector(psi, dim: int | None = None) -> np.ndarray:
    v = np.asarray(psi, dtype=complex)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise DimensionError(f"expected vector of length {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector has non-finite entries")
    return v


def as_operator(a, dim: int | None = None) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionError(f"expected a non-empty square matrix, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise DimensionError(f"expected {dim}x{dim} operator, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("operator has non-finite entries")
    return m


def op_norm(a: np.ndarray) -> float:
    """Spectral (largest singular value) norm."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    if a.ndim == 1:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a, 2))


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and bool(
        np.max(np.abs(a - a.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(a), initial=0.0))
    )


def require_hermitian(a, tol: float = HERMITIAN_TOL, name: str = "operator") -> np.ndarray:
    m = as_operator(a)
    if not is_hermitian(m, tol):
        resid = float(np.max(np.abs(m - m.conj().T)))
        raise ValidationError(f"{name} is not Hermitian (max |A - A^dag| = {resid:.3e})")
    return m


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def tensor(a, b) -> np.ndarray:
    """Kronecker product of two vectors or two operators.

    Raises
    ------
    CapacityError
        If the product dimension exceeds ``MAX_DIM``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise DimensionError("tensor needs two vectors or two operators")
    dim = a.shape[0] * b.shape[0]
    if dim > MAX_DIM:
        raise CapacityError(f"tensor product dimension {dim} exceeds MAX_DIM={MAX_DIM}")
    return np.kron(a, b)


@dataclass(frozen=True, eq=False)
class SpectralForm:
    """Eigendecomposition ``A = V diag(w) V^dag`` of a Hermitian operator.

    Propagators are generated from it as ``V diag(exp(-i w dt)) V^dag``;
    applying one to a vector costs two matrix-vector products.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_hermitian(cls, h, tol: float = HERMITIAN_TOL) -> "SpectralForm":
        h = require_hermitian(h, tol, "Hamiltonian")
        # symmetrize so eigh sees an exactly Hermitian input
        w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        w.setflags(write=False)
        v.setflags(write=False)
        return cls(w, v)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def unitary(self, dt: float) -> np.ndarray:
        v = self.eigenvectors
        return (v * np.exp(-1j * self.eigenvalues * dt)) @ v.conj().T

    def apply(self, psi: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0.0:
            return np.array(psi, dtype=complex)
        v = self.eigenvectors
        return v @ (np.exp(-1j * self.eigenvalues * dt) * (v.conj().T @ psi))

    def apply_many(self, psi: np.ndarray, dts) -> np.ndarray:
        """Rows are ``exp(-i A dt) psi`` for each ``dt``."""
        dts = np.asarray(dts, dtype=float)
        v = self.eigenvectors
        coeffs = v.conj().T @ psi
        phases = np.exp(-1j * np.outer(dts, self.eigenvalues))
        return (phases * coeffs) @ v.T


def propagator(h, dt: float) -> np.ndarray:
    """Return ``exp(-i H dt)`` for Hermitian ``H``."""
    return SpectralForm.from_hermitian(h).unitary(float(dt))


def _check_bipartite(rho, dim_r: int, dim_e: int) -> np.ndarray:
    rho = as_operator(rho)
    if dim_r < 1 or dim_e < 1 or rho.shape[0] != dim_r * dim_e:
        raise DimensionError(
            f"operator of dim {rho.shape[0]} does not factor as {dim_r} x {dim_e}"
        )
    return rho


def partial_trace_env(rho, dim_r: int, dim_e: int) -> np.ndarray:
    """Trace out the environment factor, leaving an operator on H_R."""
    rho = _check_bipartite(rho, dim_r, dim_e)
    return np.einsum("ajbj->ab", rho.reshape(dim_r, dim_e, dim_r, dim_e))


def partial_trace_rs(rho, dim_r: int, dim_e: int) -> np.ndarray:
    """Trace out the reference-system factor, leaving an operator on H_E."""
    rho = _check_bipartite(rho, dim_r, dim_e)
    return np.einsum("iaib->ab", rho.reshape(dim_r, dim_e, dim_r, dim_e))


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-random normalized vector."""
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def basis_vector(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v
