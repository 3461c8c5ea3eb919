"""Implicit dispersive update with the auxiliary variable ``z ~ du/dx``.

With ``M`` the mass matrix (consistent or lumped), ``C_ij = int phi_i phi_j'``
and ``K`` the stiffness matrix, the weak forms tested with ``phi_i`` read

    u-row:  M (U - W) / tau + eps c K U - eps (K + c C^T) Z = 0
    z-row:  (K - c C) U + (c M_c - C^T) Z = 0

where ``M_c`` is always the consistent mass. ``G(U) = eps c K U - eps (K + c C^T) Z(U)``
with ``Z(U)`` eliminated through the z-row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from . import linalg
from .mesh import FEOperators

MassMode = Literal["lumped", "consistent"]

SOLVE_TOL = 1e-11


def default_c_stab(ops: FEOperators) -> float:
    return 1.0 / ops.mesh.length


def _mass_matrix(ops: FEOperators, mass_mode: MassMode) -> sp.csr_matrix:
    if mass_mode == "consistent":
        return ops.mass
    if mass_mode == "lumped":
        return sp.diags(ops.lumped_mass, format="csr")
    raise ValueError(f"unknown mass mode {mass_mode!r}")


def _check_params(eps: float, c_stab: float) -> None:
    if not np.isfinite(eps) or eps == 0.0:
        raise ValueError(f"dispersion coefficient must be finite and nonzero, got {eps}")
    if not np.isfinite(c_stab) or c_stab <= 0.0:
        raise ValueError(f"c_stab must be positive, got {c_stab}")


class DispersiveOperator:
    """Mesh operators for the dispersive term at fixed ``eps`` and ``c_stab``.

    Caches the z-row factorization used by :meth:`apply_G` and one coupled
    system per ``(tau, mass_mode)``.
    """

    def __init__(self, ops: FEOperators, eps: float, c_stab: float | None = None, max_cached: int = 4):
        c_stab = default_c_stab(ops) if c_stab is None else float(c_stab)
        _check_params(eps, c_stab)
        self.ops = ops
        self.eps = float(eps)
        self.c_stab = c_stab
        C, K, M = ops.coupling, ops.stiffness, ops.mass
        self.z_from_u = (c_stab * C - K).tocsr()
        self.z_matrix = (c_stab * M - C.T).tocsr()
        self.u_from_z = (-self.eps * (K + c_stab * C.T)).tocsr()
        self.u_from_u = (self.eps * c_stab * K).tocsr()
        self._z_lu: linalg.Factorization | None = None
        self._mass_lu: linalg.Factorization | None = None
        self._systems: dict[tuple[float, str], DispersiveSystem] = {}
        self._max_cached = max_cached

    def z_of(self, U: np.ndarray) -> np.ndarray:
        if self._z_lu is None:
            self._z_lu = linalg.factor(self.z_matrix)
        return self._z_lu.solve(self.z_from_u @ U)

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        # direct solve: an iterative residual would leak into the conserved mass
        if self._mass_lu is None:
            self._mass_lu = linalg.factor(self.ops.mass)
        return self._mass_lu.solve(rhs)

    def G_from(self, U: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return self.u_from_u @ U + self.u_from_z @ Z

    def apply_G(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        return self.G_from(U, self.z_of(U))

    def system(self, tau: float, mass_mode: MassMode = "consistent") -> "DispersiveSystem":
        key = (float(tau), mass_mode)
        sys_ = self._systems.get(key)
        if sys_ is None:
            sys_ = DispersiveSystem(self, float(tau), mass_mode)
            if len(self._systems) >= self._max_cached:
                self._systems.pop(next(iter(self._systems)))
            self._systems[key] = sys_
        return sys_


@dataclass
class DispersiveSystem:
    """Coupled ``2I x 2I`` system ``[[M/tau + eps c K, -eps(K + c C^T)], [K - c C, c M - C^T]]``."""

    operator: DispersiveOperator
    tau: float
    mass_mode: MassMode
    blocks: sp.csr_matrix = field(init=False, repr=False)
    rhs_mass: sp.csr_matrix = field(init=False, repr=False)
    factorization: linalg.Factorization = field(init=False, repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0.0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        op = self.operator
        self.rhs_mass = _mass_matrix(op.ops, self.mass_mode)
        self.blocks = sp.bmat(
            [[self.rhs_mass / self.tau + op.u_from_u, op.u_from_z], [-op.z_from_u, op.z_matrix]],
            format="csr",
        )
        try:
            self.factorization = linalg.factor(self.blocks)
        except linalg.SingularMatrixError as exc:
            raise linalg.SingularMatrixError(f"dispersive system is singular: {exc}") from exc

    @property
    def eps(self) -> float:
        return self.operator.eps

    @property
    def c_stab(self) -> float:
        return self.operator.c_stab

    @property
    def num_dofs(self) -> int:
        return self.operator.ops.mesh.num_dofs

    def apply(self, U: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.blocks @ np.concatenate([U, Z])
        n = self.num_dofs
        return out[:n], out[n:]

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve with u-row right-hand side ``rhs / tau`` (``rhs`` in mass units)."""
        n = self.num_dofs
        b = np.concatenate([np.asarray(rhs, dtype=float) / self.tau, np.zeros(n)])
        x = self.factorization.solve(b)
        res = self.factorization.residual(x, b)
        if not np.isfinite(res) or res > SOLVE_TOL:
            raise ArithmeticError(f"dispersive solve residual {res:.3e} above {SOLVE_TOL:.0e}")
        return x[:n], x[n:]


def assemble_dispersive(ops: FEOperators, tau: float, eps: float, c_stab: float | None = None,
                        mass_mode: MassMode = "consistent") -> DispersiveSystem:
    return DispersiveOperator(ops, eps, c_stab).system(tau, mass_mode)


def dispersive_update(sys_: DispersiveSystem, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One implicit dispersive step from the hyperbolic prediction ``W``; returns ``(U, Z)``."""
    W = np.asarray(W, dtype=float)
    if W.shape != (sys_.num_dofs,):
        raise ValueError(f"state has shape {W.shape}, expected ({sys_.num_dofs},)")
    return sys_.solve(sys_.rhs_mass @ W)


def apply_G(U: np.ndarray, eps: float, c_stab: float, ops: FEOperators) -> np.ndarray:
    """Vector ``(G(u_h), phi_i)``."""
    return DispersiveOperator(ops, eps, c_stab).apply_G(U)


def stage_dispersive_solve(
    operator: DispersiveOperator,
    W_stage: np.ndarray,
    G_history: Sequence[np.ndarray],
    tau: float,
    deltas: Sequence[float],
    diagonal: float,
    mass_mode: MassMode = "consistent",
) -> tuple[np.ndarray, np.ndarray | None]:
    """Solve ``M U + tau*diagonal G(U) = M W - tau sum_k deltas[k] G_history[k]``.

    With ``diagonal == 0`` the update is explicit (a mass solve only) and no ``Z`` is
    returned. Otherwise returns ``(U, Z(U))``.
    """
    if len(G_history) != len(deltas):
        raise ValueError("need one tableau increment per stored G")
    M = _mass_matrix(operator.ops, mass_mode)
    rhs = M @ W_stage
    for coef, G in zip(deltas, G_history):
        if coef != 0.0:
            rhs = rhs - (tau * coef) * G
    if diagonal == 0.0:
        if mass_mode == "lumped":
            return rhs / operator.ops.lumped_mass, None
        return operator.mass_solve(rhs), None
    return operator.system(tau * diagonal, mass_mode).solve(rhs)
