"""Thin sparse linear algebra layer over scipy.sparse.

Matrices are ``scipy.sparse.csr_matrix`` with sorted indices. Direct solves go
through SuperLU; symmetric positive definite systems may use Jacobi-preconditioned
conjugate gradients.
"""
from __future__ import annotations

import hashlib

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# pivots below this fraction of the largest one count as singular
SINGULAR_PIVOT_RATIO = 1e-13


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    return A


def matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def fingerprint(A: sp.spmatrix) -> str:
    A = as_csr(A)
    digest = hashlib.sha1()
    for arr in (np.asarray(A.shape), A.indptr, A.indices, A.data):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


class Factorization:
    """Reusable sparse LU factorization of a square matrix."""

    def __init__(self, A: sp.spmatrix):
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"cannot factor non-square matrix of shape {A.shape}")
        self.shape = A.shape
        self.fingerprint = fingerprint(A)
        self._A = A
        # row equilibration keeps the pivot test meaningful for blocks of very different scale
        row_max = abs(A).max(axis=1).toarray().ravel()
        if np.any(row_max == 0.0):
            raise SingularMatrixError("matrix has an empty row")
        self._row_scale = 1.0 / row_max
        try:
            self._lu = spla.splu((sp.diags(self._row_scale) @ A).tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            raise SingularMatrixError(str(exc)) from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.size and pivots.min() <= SINGULAR_PIVOT_RATIO * pivots.max():
            raise SingularMatrixError(
                f"matrix is numerically singular (pivot ratio {pivots.min() / pivots.max():.2e})"
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"right-hand side has length {b.shape[0]}, expected {self.shape[0]}")
        return self._lu.solve(self._row_scale * b if b.ndim == 1 else self._row_scale[:, None] * b)

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        """Relative residual ``|A x - b| / |b|``."""
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(self._A @ x - b) / (nb if nb > 0 else 1.0))


def factor(A: sp.spmatrix) -> Factorization:
    return Factorization(A)


def solve(F: Factorization, b: np.ndarray) -> np.ndarray:
    return F.solve(b)


def cg_solve(
    A: sp.csr_matrix,
    b: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 1000,
    warm_start: np.ndarray | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned CG for SPD ``A`` to relative residual ``tol``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {A.shape[0]}")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    inv_diag = 1.0 / A.diagonal()
    precond = spla.LinearOperator(A.shape, matvec=lambda r: inv_diag * r, dtype=float)
    x, info = spla.cg(A, b, x0=warm_start, rtol=tol, atol=0.0, maxiter=max_iter, M=precond)
    res = float(np.linalg.norm(A @ x - b) / nb)
    if info != 0 or res > 10 * tol:
        raise ConvergenceError(f"CG did not converge in {max_iter} iterations (residual {res:.3e})", res)
    return x
