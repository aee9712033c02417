"""Dense complex linear algebra helpers.

All operations work on plain ``numpy`` arrays (complex128, row-major) and are
pure functions, so values can be shared freely between trajectory workers.
Dimensions never exceed 16 in practice; nothing here is tuned beyond that.
"""

from __future__ import annotations

import numpy as np

from .tolerances import DEFAULT_TOLS, Tolerances


class LinearAlgebraError(RuntimeError):
    """Raised when a numerical linear-algebra primitive fails its contract."""


def as_complex_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a C-contiguous complex128 matrix with finite entries."""
    m = np.ascontiguousarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def hermitize(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^dagger)/2."""
    return 0.5 * (a + a.conj().T)


def hermiticity_defect(a: np.ndarray) -> float:
    """Max-norm distance from ``a`` to its Hermitian part."""
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def require_hermitian(a, tol: float | None = None, name: str = "matrix") -> np.ndarray:
    """Validate Hermiticity within ``tol`` and return the coerced matrix."""
    m = as_complex_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    tol = DEFAULT_TOLS.hermitian if tol is None else tol
    defect = hermiticity_defect(m)
    if defect > tol:
        raise ValueError(f"{name} is not Hermitian: max |A - A^dagger| = {defect:.3e} > {tol:.1e}")
    return m


def kron(a, b) -> np.ndarray:
    """Kronecker product with block rule (A (x) B)[p(i-1)+r, q(j-1)+s] = A_ij B_rs."""
    return np.kron(as_complex_matrix(a), as_complex_matrix(b))


def _require_same_square(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise ValueError(f"{op} needs square matrices of equal size, got {a.shape} and {b.shape}")


def commutator(a, b) -> np.ndarray:
    """AB - BA."""
    a = as_complex_matrix(a)
    b = as_complex_matrix(b)
    _require_same_square(a, b, "commutator")
    return a @ b - b @ a


def trace_product(a, b) -> complex:
    """Tr(AB) without forming the product matrix."""
    a = as_complex_matrix(a)
    b = as_complex_matrix(b)
    _require_same_square(a, b, "trace_product")
    return complex(np.sum(a * b.T))


def eig_hermitian(a, tols: Tolerances = DEFAULT_TOLS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(w, u)`` with eigenvalues ``w`` ascending and unitary ``u`` such
    that ``a = u @ diag(w) @ u^dagger``; the reconstruction is verified to
    ``tols.eig_reconstruction`` in max-norm.
    """
    m = require_hermitian(a, tols.hermitian)
    try:
        w, u = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise LinearAlgebraError(f"Hermitian eigendecomposition failed: {exc}") from exc
    defect = float(np.max(np.abs(m - (u * w) @ u.conj().T)))
    if defect > tols.eig_reconstruction:
        raise LinearAlgebraError(
            f"eigendecomposition reconstruction error {defect:.3e} exceeds "
            f"{tols.eig_reconstruction:.1e}"
        )
    return w, u


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random Hermitian matrix with Gaussian entries."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitize(g)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix (Hermitian, PSD, unit trace) of the given rank."""
    rank = dim if rank is None else rank
    if not 1 <= rank <= dim:
        raise ValueError(f"rank must lie in [1, {dim}], got {rank}")
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
