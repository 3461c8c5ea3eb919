"""Periodic 1D Lagrange meshes and the assembled finite element operators."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

SUPPORTED_DEGREES = (1, 2, 3)


@dataclass(frozen=True)
class Mesh:
    """Uniform periodic mesh of ``[a, b)`` carrying degree-``k`` Lagrange nodes.

    The endpoint ``b`` is identified with ``a``, so there are ``k * num_cells``
    global degrees of freedom.
    """

    a: float
    b: float
    num_cells: int
    degree: int
    dof_coords: np.ndarray
    cell_to_dofs: np.ndarray

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.num_cells

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def num_dofs(self) -> int:
        return self.dof_coords.size

    @property
    def reported_dofs(self) -> int:
        """DOF count with the periodic endpoint counted twice, as in published tables."""
        return self.num_dofs + 1

    @cached_property
    def reference_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.degree + 1)

    def cell_points(self, xi) -> np.ndarray:
        """Physical coordinates of reference points ``xi`` in every cell, shape (cells, len(xi))."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        left = self.a + self.h * np.arange(self.num_cells)
        return left[:, None] + self.h * xi[None, :]


def build_mesh(a: float, b: float, num_cells: int, degree: int) -> Mesh:
    if degree not in SUPPORTED_DEGREES:
        raise ValueError(f"degree must be one of {SUPPORTED_DEGREES}, got {degree}")
    if int(num_cells) != num_cells or num_cells < 3:
        raise ValueError(f"num_cells must be an integer >= 3, got {num_cells}")
    if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
        raise ValueError(f"need finite b > a, got a={a}, b={b}")
    num_cells = int(num_cells)
    ndofs = degree * num_cells
    h = (b - a) / num_cells
    local = np.arange(degree + 1)
    cell_to_dofs = (degree * np.arange(num_cells)[:, None] + local[None, :]) % ndofs
    idx = np.arange(ndofs)
    dof_coords = a + h * (idx // degree) + h * (idx % degree) / degree
    dof_coords.setflags(write=False)
    cell_to_dofs.setflags(write=False)
    return Mesh(float(a), float(b), num_cells, degree, dof_coords, cell_to_dofs)


# -- reference element -------------------------------------------------------


def lagrange_basis(degree: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the equispaced Lagrange basis on [0, 1].

    Returns two arrays of shape ``(degree + 1, len(xi))``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    nodes = np.linspace(0.0, 1.0, degree + 1)
    n = degree + 1
    vals = np.ones((n, xi.size))
    ders = np.zeros((n, xi.size))
    for a in range(n):
        others = [nodes[b] for b in range(n) if b != a]
        denom = np.prod([nodes[a] - x for x in others])
        vals[a] = np.prod([xi - x for x in others], axis=0) / denom if others else 1.0
        for skip in range(len(others)):
            term = np.ones_like(xi)
            for m, x in enumerate(others):
                if m != skip:
                    term = term * (xi - x)
            ders[a] += term
        ders[a] /= denom
    return vals, ders


def gauss_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def local_matrices(degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference mass, derivative-coupling and stiffness matrices on a unit cell.

    ``C[a, b] = int phi_a phi_b'`` uses the same orientation as the global operator.
    Physical matrices scale as ``h * M``, ``C`` and ``K / h``.
    """
    xq, wq = gauss_rule(degree + 1)
    phi, dphi = lagrange_basis(degree, xq)
    mass = (phi * wq) @ phi.T
    coupling = (phi * wq) @ dphi.T
    stiff = (dphi * wq) @ dphi.T
    return mass, coupling, stiff


# -- global operators --------------------------------------------------------


@dataclass(frozen=True)
class FEOperators:
    """Mesh-dependent operators sharing one compressed-row sparsity pattern.

    ``rows``/``cols`` list the stored entries in CSR order; ``transpose`` maps
    each stored entry ``(i, j)`` to the position of ``(j, i)``.
    """

    mesh: Mesh
    lumped_mass: np.ndarray
    mass: sp.csr_matrix
    coupling: sp.csr_matrix
    stiffness: sp.csr_matrix
    rows: np.ndarray
    cols: np.ndarray
    transpose: np.ndarray

    @property
    def indptr(self) -> np.ndarray:
        return self.mass.indptr

    @cached_property
    def off_diagonal(self) -> np.ndarray:
        return self.rows != self.cols

    @cached_property
    def diagonal_entries(self) -> np.ndarray:
        """Positions of the diagonal entries in the pattern, one per row."""
        return np.flatnonzero(self.rows == self.cols)

    def pattern_matvec(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Product of the pattern matrix holding ``values`` with ``x``."""
        return self.row_reduce(values * x[self.cols])

    def stencil(self, i: int) -> np.ndarray:
        """Global indices ``j`` with ``phi_i phi_j`` not identically zero."""
        return self.mass.indices[self.mass.indptr[i] : self.mass.indptr[i + 1]]

    def row_reduce(self, values: np.ndarray, ufunc=np.add) -> np.ndarray:
        """Reduce per-entry values over each row of the pattern."""
        return ufunc.reduceat(values, self.indptr[:-1])

    def pattern_matrix(self, values: np.ndarray) -> sp.csr_matrix:
        n = self.mesh.num_dofs
        return sp.csr_matrix((values, self.mass.indices, self.mass.indptr), shape=(n, n))


def assemble_operators(mesh: Mesh) -> FEOperators:
    k = mesh.degree
    n = mesh.num_dofs
    loc_m, loc_c, loc_k = local_matrices(k)
    dofs = mesh.cell_to_dofs
    r = np.repeat(dofs, k + 1, axis=1).ravel()
    c = np.tile(dofs, (1, k + 1)).ravel()
    cells = mesh.num_cells

    key = r.astype(np.int64) * n + c
    uniq, inverse = np.unique(key, return_inverse=True)
    rows = (uniq // n).astype(np.int64)
    cols = (uniq % n).astype(np.int64)

    def accumulate(local: np.ndarray, scale: float) -> np.ndarray:
        vals = np.tile(local.ravel() * scale, cells)
        return np.bincount(inverse, weights=vals, minlength=uniq.size)

    m_vals = accumulate(loc_m, mesh.h)
    c_vals = accumulate(loc_c, 1.0)
    k_vals = accumulate(loc_k, 1.0 / mesh.h)

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])

    def csr(vals: np.ndarray) -> sp.csr_matrix:
        mat = sp.csr_matrix((vals, cols.copy(), indptr.copy()), shape=(n, n))
        mat.has_sorted_indices = True
        return mat

    transpose = np.searchsorted(uniq, cols * n + rows)
    # exact (skew-)symmetry on the pattern; the identities hold analytically
    m_vals = 0.5 * (m_vals + m_vals[transpose])
    k_vals = 0.5 * (k_vals + k_vals[transpose])
    c_vals = 0.5 * (c_vals - c_vals[transpose])

    # int phi_i over one cell is the row sum of the local mass matrix
    lumped = np.bincount(dofs.ravel(), weights=np.tile(loc_m.sum(axis=1) * mesh.h, cells), minlength=n)
    for arr in (lumped, rows, cols, transpose):
        arr.setflags(write=False)
    return FEOperators(mesh, lumped, csr(m_vals), csr(c_vals), csr(k_vals), rows, cols, transpose)


# -- discrete functions ------------------------------------------------------


def interpolate(f: Callable[[np.ndarray], np.ndarray], mesh: Mesh) -> np.ndarray:
    """Nodal interpolant of ``f``; ``f`` is called once on the array of DOF coordinates."""
    values = np.broadcast_to(np.asarray(f(mesh.dof_coords), dtype=float), mesh.dof_coords.shape).copy()
    if not np.all(np.isfinite(values)):
        bad = mesh.dof_coords[~np.isfinite(values)]
        raise ValueError(f"non-finite initial data at x = {bad[:5]}")
    return values


def evaluate(U: np.ndarray, mesh: Mesh, xi) -> np.ndarray:
    """Evaluate ``u_h`` at reference points ``xi`` of every cell, shape (cells, len(xi))."""
    phi, _ = lagrange_basis(mesh.degree, xi)
    return U[mesh.cell_to_dofs] @ phi


def evaluate_derivative(U: np.ndarray, mesh: Mesh, xi) -> np.ndarray:
    _, dphi = lagrange_basis(mesh.degree, xi)
    return (U[mesh.cell_to_dofs] @ dphi) / mesh.h


def weighted_l2_norm(U: np.ndarray, ops: FEOperators) -> float:
    U = np.asarray(U)
    if U.shape != ops.lumped_mass.shape:
        raise ValueError(f"state has shape {U.shape}, expected {ops.lumped_mass.shape}")
    return float(np.sqrt(np.dot(U * U, ops.lumped_mass)))


def mass(U: np.ndarray, ops: FEOperators) -> float:
    """Total mass ``int u_h dx``."""
    return float(np.dot(ops.lumped_mass, U))


def sample_points(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Reference points used for discrete max norms: cell endpoints, nodes and midpoints."""
    xi = np.union1d(mesh.reference_nodes[:-1], [0.5])
    return xi, mesh.cell_points(xi)


def relative_linf_error(
    U: np.ndarray,
    exact: Callable[[float, np.ndarray], np.ndarray],
    mesh: Mesh,
    t: float,
) -> float:
    """``max |u_h - u(t)| / max |u(t)|`` over DOF nodes and cell midpoints."""
    xi, x = sample_points(mesh)
    ref = np.asarray(exact(t, x), dtype=float)
    denom = np.max(np.abs(ref))
    if not np.isfinite(denom):
        raise ValueError("exact solution is not finite on the sample set")
    if denom == 0.0:
        raise ValueError("exact solution vanishes on the sample set; relative error undefined")
    return float(np.max(np.abs(evaluate(U, mesh, xi) - ref)) / denom)
