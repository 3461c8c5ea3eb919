"""Explicit hyperbolic prediction with graph viscosity."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from . import linalg
from .flux import FluxModel, lambda_max
from .mesh import FEOperators

# relative slack used when checking the step against tau*
CFL_SLACK = 1e-12


class CFLViolation(ValueError):
    pass


@dataclass(frozen=True)
class GraphViscosity:
    """Symmetric viscosity on the operator pattern; ``values`` follow ``ops.rows``/``ops.cols``.

    Diagonal entries hold minus the off-diagonal row sum.
    """

    values: np.ndarray

    def off_diagonal_row_sums(self, ops: FEOperators) -> np.ndarray:
        return -self.values[ops.diagonal_entries]

    def matrix(self, ops: FEOperators):
        return ops.pattern_matrix(self.values)


@dataclass(frozen=True)
class HighOrderViscosityPolicy:
    """``zero`` drops the viscosity; ``scaled`` uses ``d_ij * max(psi_i, psi_j)``."""

    mode: Literal["zero", "scaled"] = "zero"
    psi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("zero", "scaled"):
            raise ValueError(f"unknown high-order viscosity mode {self.mode!r}")
        if self.mode == "scaled":
            if self.psi is None:
                raise ValueError("scaled policy needs psi")
            psi = np.asarray(self.psi, dtype=float)
            if np.any(psi < 0.0) or np.any(psi > 1.0):
                raise ValueError("psi must lie in [0, 1]")


def _with_diagonal(offdiag: np.ndarray, ops: FEOperators) -> np.ndarray:
    diag = ops.diagonal_entries
    vals = np.array(offdiag, dtype=float)
    vals[diag] = 0.0
    vals[diag] = -ops.row_reduce(vals)
    return vals


def compute_graph_viscosity(U: np.ndarray, flux: FluxModel, ops: FEOperators) -> GraphViscosity:
    U = np.asarray(U, dtype=float)
    if U.shape != ops.lumped_mass.shape:
        raise ValueError(f"state has shape {U.shape}, expected {ops.lumped_mass.shape}")
    c = ops.coupling.data
    Ui = U[ops.rows]
    Uj = U[ops.cols]
    d_ij = lambda_max(flux, Ui, Uj) * np.abs(c)
    # both orientations of the edge; in 1D |c_ij| = |c_ji| but keep the general form
    d = np.maximum(d_ij, d_ij[ops.transpose])
    return GraphViscosity(_with_diagonal(d, ops))


def high_order_viscosity(d: GraphViscosity, policy: HighOrderViscosityPolicy, ops: FEOperators) -> GraphViscosity:
    if policy.mode == "zero":
        return GraphViscosity(np.zeros_like(d.values))
    psi = np.asarray(policy.psi, dtype=float)
    scale = np.maximum(psi[ops.rows], psi[ops.cols])
    return GraphViscosity(_with_diagonal(d.values * scale, ops))


def tau_star(d: GraphViscosity, ops: FEOperators) -> float:
    """Largest step ``min_i m_i / (4 sum_{j != i} d_ij)``; ``inf`` without any viscosity."""
    sums = d.off_diagonal_row_sums(ops)
    active = sums > 0.0
    if not np.any(active):
        return np.inf
    return float(np.min(ops.lumped_mass[active] / (4.0 * sums[active])))


def flux_map(U: np.ndarray, flux: FluxModel, d: GraphViscosity, ops: FEOperators) -> np.ndarray:
    """``sum_j f(U_j) c_ij - d_ij (U_j - U_i)`` for every ``i``."""
    return ops.pattern_matvec(ops.coupling.data, flux.eval(U)) - ops.pattern_matvec(d.values, U)


def flux_map_low(U, flux: FluxModel, d: GraphViscosity, ops: FEOperators) -> np.ndarray:
    return flux_map(np.asarray(U, dtype=float), flux, d, ops)


def flux_map_high(U, flux: FluxModel, d: GraphViscosity, policy: HighOrderViscosityPolicy,
                  ops: FEOperators) -> np.ndarray:
    return flux_map(np.asarray(U, dtype=float), flux, high_order_viscosity(d, policy, ops), ops)


def edge_fluxes(U: np.ndarray, flux: FluxModel, d: GraphViscosity, ops: FEOperators) -> np.ndarray:
    """Skew-symmetric edge form of :func:`flux_map`: ``(f_i + f_j) c_ij - d_ij (U_j - U_i)``.

    Row sums reproduce the flux map because ``sum_j c_ij = 0``.
    """
    f = flux.eval(U)
    vals = (f[ops.rows] + f[ops.cols]) * ops.coupling.data - d.values * (U[ops.cols] - U[ops.rows])
    vals[ops.diagonal_entries] = 0.0
    return vals


def low_order_predict(
    U: np.ndarray,
    tau: float,
    flux: FluxModel,
    ops: FEOperators,
    d: GraphViscosity | None = None,
    *,
    check_cfl: bool = True,
) -> np.ndarray:
    """Lumped-mass update ``W = U - tau / m * F^L(U)``.

    Raises :class:`CFLViolation` when ``tau`` exceeds ``tau*`` of ``U`` unless
    ``check_cfl`` is off.
    """
    U = np.asarray(U, dtype=float)
    if d is None:
        d = compute_graph_viscosity(U, flux, ops)
    if check_cfl:
        limit = tau_star(d, ops)
        if tau > limit * (1.0 + CFL_SLACK):
            raise CFLViolation(f"step {tau:.6e} exceeds tau* = {limit:.6e}")
    return U - (tau / ops.lumped_mass) * flux_map_low(U, flux, d, ops)


class MassSolver:
    """Consistent-mass solves, warm-started from the previous solution."""

    def __init__(self, ops: FEOperators, tol: float = 1e-12, method: Literal["cg", "direct"] = "cg"):
        self.ops = ops
        self.tol = tol
        self.method = method
        self._last: np.ndarray | None = None
        self._lu = linalg.factor(ops.mass) if method == "direct" else None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(rhs)
        x = linalg.cg_solve(self.ops.mass, rhs, tol=self.tol, max_iter=2000, warm_start=self._last)
        self._last = x
        return x


def high_order_predict(
    U_prev: np.ndarray,
    F_history: Sequence[np.ndarray],
    tau: float,
    deltas: Sequence[float],
    ops: FEOperators,
    mass_solver: MassSolver | None = None,
) -> np.ndarray:
    """Solve ``M W = M U_prev - tau * sum_k deltas[k] F_history[k]``.

    Returns ``U_prev`` unchanged when every increment vanishes.
    """
    if len(F_history) != len(deltas):
        raise ValueError("need one tableau increment per stored flux")
    increment = np.zeros_like(U_prev, dtype=float)
    for coef, F in zip(deltas, F_history):
        if coef != 0.0:
            increment += coef * F
    if not np.any(increment):
        return np.array(U_prev, dtype=float)
    solver = mass_solver or MassSolver(ops)
    # solve for the update only so the warm start stays meaningful across stages
    return U_prev - tau * solver.solve(increment)
