"""Zalesak flux-corrected transport between the low- and high-order predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import FEOperators

RECONSTRUCTION_TOL = 1e-9
BOUNDS_SLACK = 1e-12


class LimiterInputError(ValueError):
    pass


@dataclass(frozen=True)
class AntidiffusiveFluxes:
    """Skew-symmetric corrections on the operator pattern (entry order of ``ops.rows``)."""

    values: np.ndarray

    def row_sums(self, ops: FEOperators) -> np.ndarray:
        return ops.row_reduce(self.values)


def local_bounds(U: np.ndarray, ops: FEOperators) -> tuple[np.ndarray, np.ndarray]:
    """Stencil-wise minimum and maximum of ``U``."""
    vals = U[ops.cols]
    return ops.row_reduce(vals, np.minimum), ops.row_reduce(vals, np.maximum)


def relaxed_bounds(U: np.ndarray, ops: FEOperators) -> tuple[np.ndarray, np.ndarray]:
    """Stencil bounds widened at smooth extrema, in the style of convex limiting.

    The widening is ``r_i = min((m_i/|D|)^(3/2) max(|lo_i|, |hi_i|), |avg_j (lap_i + lap_j)/2|)``
    where ``lap_j`` is the mean of ``U_j - U_k`` over the neighbours ``k`` of ``j``.
    Both terms vanish under refinement, faster than ``h`` for smooth data.
    """
    lo, hi = local_bounds(U, ops)
    diff = U[ops.rows] - U[ops.cols]
    count = ops.row_reduce(np.ones_like(diff))
    lap = ops.row_reduce(diff) / (count - 1.0)
    avg = ops.row_reduce(0.5 * (lap[ops.rows] + lap[ops.cols])) / count
    scale = (ops.lumped_mass / ops.mesh.length) ** 1.5 * np.maximum(np.abs(lo), np.abs(hi))
    r = np.minimum(scale, np.abs(avg))
    return lo - r, hi + r


def bounds_slack(U: np.ndarray) -> float:
    return BOUNDS_SLACK * (1.0 + float(np.max(np.abs(U))))


def compute_antidiffusive_fluxes(
    U: np.ndarray,
    W_high: np.ndarray,
    W_low: np.ndarray,
    tau: float,
    ops: FEOperators,
    low_edge_flux: np.ndarray,
    high_edge_flux: np.ndarray,
) -> AntidiffusiveFluxes:
    """Edge corrections ``A_ij`` with ``m_i W_high_i = m_i W_low_i + sum_j A_ij``.

    ``low_edge_flux`` and ``high_edge_flux`` are the skew edge forms of the flux
    increments used by the two predictions, already weighted by their tableau
    coefficients, so that ``m W_low = m U - tau * rowsum(low)`` and
    ``M W_high = M U - tau * rowsum(high)``. For a single forward-Euler stage
    the flux parts cancel to ``tau (d^H_ij - d^L_ij)(U_j - U_i)``.
    """
    dW = W_high - U
    vals = ops.mass.data * (dW[ops.rows] - dW[ops.cols]) + tau * (low_edge_flux - high_edge_flux)
    vals = 0.5 * (vals - vals[ops.transpose])
    A = AntidiffusiveFluxes(vals)

    m = ops.lumped_mass
    recon = W_low + A.row_sums(ops) / m
    scale = max(float(np.max(np.abs(W_high))), float(np.max(np.abs(W_high - W_low))), 1e-300)
    residual = float(np.max(np.abs(recon - W_high))) / scale
    if residual > RECONSTRUCTION_TOL:
        raise ArithmeticError(f"antidiffusive fluxes do not reconstruct the high-order state (residual {residual:.2e})")
    return A


def limiter_coefficients(
    U: np.ndarray,
    W_low: np.ndarray,
    A: AntidiffusiveFluxes,
    ops: FEOperators,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Symmetric Zalesak coefficients ``l_ij`` in [0, 1]."""
    lo, hi = local_bounds(U, ops) if bounds is None else bounds
    m = ops.lumped_mass
    a = A.values
    p_plus = ops.row_reduce(np.maximum(a, 0.0))
    p_minus = ops.row_reduce(np.minimum(a, 0.0))
    q_plus = np.maximum(m * (hi - W_low), 0.0)
    q_minus = np.minimum(m * (lo - W_low), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_plus = np.where(p_plus > 0.0, np.minimum(1.0, q_plus / p_plus), 1.0)
        r_minus = np.where(p_minus < 0.0, np.minimum(1.0, q_minus / p_minus), 1.0)
    i, j = ops.rows, ops.cols
    return np.where(a > 0.0, np.minimum(r_plus[i], r_minus[j]), np.minimum(r_minus[i], r_plus[j]))


def limit(
    U: np.ndarray,
    W_low: np.ndarray,
    A: AntidiffusiveFluxes,
    ops: FEOperators,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Add the largest admissible share of ``A`` to ``W_low``.

    ``bounds`` defaults to the stencil min/max of ``U``; ``W_low`` must already
    respect them.
    """
    lo, hi = local_bounds(U, ops) if bounds is None else bounds
    slack = bounds_slack(U)
    excess = max(float(np.max(lo - W_low)), float(np.max(W_low - hi)))
    if excess > slack:
        raise LimiterInputError(f"low-order state leaves its local bounds by {excess:.3e}")
    if not np.any(A.values):
        return np.array(W_low, dtype=float)
    ell = limiter_coefficients(U, W_low, A, ops, (lo, hi))
    return W_low + ops.row_reduce(ell * A.values) / ops.lumped_mass
