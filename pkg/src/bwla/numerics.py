"""Dense linear-algebra substrate: validated matrices, SVD with a fixed sign
convention, truncated SVD, and row-major reshape helpers.

Everything downstream assumes float64 C-contiguous arrays and the row-major
reshape convention declared here (``reshape_row_to_mat``); the Kronecker
module's dense-oracle tests pin that convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Central accuracy contracts for the numeric substrate."""

    svd_reconstruction: float = 1e-9      # relative to the largest singular value
    orthonormality: float = 1e-10         # per entry of U^T U - I
    factor_orthogonality: float = 1e-8    # Kronecker factor drift threshold
    reorthogonalized: float = 1e-12       # drift after re-orthogonalization
    kron_dense_match: float = 1e-10       # factored vs dense Kronecker apply
    inner_product: float = 1e-8           # forward-equivalence checks
    monotone_slack: float = 1e-9          # allowed uphill slack for monotone losses


TOL = Tolerances()


class NumericsError(ValueError):
    """Raised when an input violates a numeric precondition."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite float64 2-D array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.size == 0:
        raise NumericsError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise NumericsError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(out)


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Validate and convert to a finite float64 1-D array."""
    out = np.asarray(v, dtype=np.float64).ravel()
    if out.size == 0:
        raise NumericsError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise NumericsError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = U @ diag(S) @ Vt`` with descending S and the sign
    convention that the first nonzero entry of every column of U is positive.
    """

    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vt


def _fix_signs(U: np.ndarray, Vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # First nonzero entry of each left singular vector made positive; the
    # paired row of Vt flips with it so the product is unchanged.
    U = U.copy()
    Vt = Vt.copy()
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.flatnonzero(col != 0.0)
        if nz.size and col[nz[0]] < 0.0:
            U[:, j] = -col
            Vt[j, :] = -Vt[j, :]
    return U, Vt


def svd(a) -> SvdResult:
    """Thin SVD with deterministic signs.

    Raises ``NumericsError`` for non-finite input and propagates LAPACK
    convergence failures with the iteration context attached.
    """
    mat = as_matrix(a, "svd input")
    try:
        U, S, Vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericsError(f"SVD did not converge: {exc}") from exc
    U, Vt = _fix_signs(U, Vt)
    return SvdResult(U=U, S=S, Vt=Vt)


def truncated_svd(a, k: int) -> SvdResult:
    """Top-``k`` factors of the SVD; best rank-k Frobenius approximation."""
    mat = as_matrix(a, "truncated_svd input")
    kmax = min(mat.shape)
    if not 1 <= k <= kmax:
        raise NumericsError(f"k={k} out of range [1, {kmax}]")
    full = svd(mat)
    return SvdResult(U=full.U[:, :k].copy(), S=full.S[:k].copy(), Vt=full.Vt[:k, :].copy())


def polar_orthogonal(c) -> np.ndarray:
    """Orthogonal polar factor U @ Vt of a square matrix.

    Zero input maps to the identity (documented tie-break for degenerate
    cross matrices in the rotation updates).
    """
    mat = as_matrix(c, "polar input")
    if mat.shape[0] != mat.shape[1]:
        raise NumericsError("polar factor requires a square matrix")
    if not np.any(mat):
        return np.eye(mat.shape[0])
    res = svd(mat)
    return res.U @ res.Vt


def reshape_row_to_mat(v, n1: int, n2: int) -> np.ndarray:
    """Row-major reshape of a length n1*n2 vector: index j -> (j // n2, j % n2)."""
    vec = as_vector(v, "reshape input")
    if vec.size != n1 * n2:
        raise NumericsError(f"cannot reshape length {vec.size} into {n1}x{n2}")
    return vec.reshape(n1, n2)


def flatten_mat_to_row(m) -> np.ndarray:
    """Inverse of ``reshape_row_to_mat`` (row-major flatten)."""
    return as_matrix(m, "flatten input").reshape(-1)


def fro_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def relative_error(actual, expected) -> float:
    """Frobenius-norm relative error with a unit floor for tiny references."""
    ref = fro_norm(expected)
    return fro_norm(np.asarray(actual) - np.asarray(expected)) / max(ref, 1e-300)
