"""Numerical checks of the structural properties of the scheme.

Each check returns a :class:`CheckResult`; ``gkdv check`` and the acceptance
tests share them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dispersive, harness, hyperbolic, imex, limiter, mesh
from .flux import make_builtin


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" [{self.detail}]" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3e} (limit {self.limit:.0e}){extra}"


def _ops(num_cells: int, degree: int, a: float = -1.0, b: float = 1.0) -> mesh.FEOperators:
    return mesh.assemble_operators(mesh.build_mesh(a, b, num_cells, degree))


def random_state(rng: np.random.Generator, ops: mesh.FEOperators) -> np.ndarray:
    """A smooth random profile plus nodal noise, so both regimes are exercised."""
    x = ops.mesh.dof_coords
    L = ops.mesh.length
    k = rng.integers(1, 6, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    amp = rng.uniform(-1, 1, size=3)
    smooth = sum(a * np.sin(2 * np.pi * kk * (x - ops.mesh.a) / L + p) for a, kk, p in zip(amp, k, phase))
    return smooth + rng.uniform(-0.5, 0.5) * rng.standard_normal(x.size)


# --------------------------------------------------------------------------- dispersive


def energy_identity_residual(sys_: dispersive.DispersiveSystem, W: np.ndarray) -> float:
    """Relative residual of ``|u|^2 + |u - w|^2 + 2 tau eps c |z - u'|^2 = |w|^2``.

    Norms are the mass norm of the system (consistent or lumped) for ``u`` and
    ``w``; the ``z`` term is always an L2 integral.
    """
    U, Z = dispersive.dispersive_update(sys_, W)
    ops = sys_.operator.ops
    Mn = sys_.rhs_mass
    D = U - W
    gap = Z @ (ops.mass @ Z) - 2.0 * Z @ (ops.coupling @ U) + U @ (ops.stiffness @ U)
    lhs = U @ (Mn @ U) + D @ (Mn @ D) + 2.0 * sys_.tau * sys_.eps * sys_.c_stab * gap
    rhs = W @ (Mn @ W)
    return abs(lhs - rhs) / rhs


def check_energy_identity(samples: int = 100, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for degree in (1, 2):
        ops = _ops(32, degree, -5.0, 5.0)
        for mode in ("consistent", "lumped"):
            op = dispersive.DispersiveOperator(ops, eps=rng.uniform(0.1, 2.0))
            for tau in (1e-4, 1e-2, 1.0):
                sys_ = op.system(tau, mode)
                for _ in range(samples):
                    worst = max(worst, energy_identity_residual(sys_, random_state(rng, ops)))
    return CheckResult("dispersive energy identity", worst <= tol, worst, tol)


# --------------------------------------------------------------------------- hyperbolic


def entropy_row_residual(U: np.ndarray, W: np.ndarray, tau: float, d: hyperbolic.GraphViscosity,
                         flux, ops: mesh.FEOperators) -> np.ndarray:
    """Row-wise left side of the discrete square-entropy inequality (should be <= 0)."""
    eta = lambda v: 0.5 * v * v  # noqa: E731
    q = flux.square_entropy_flux(U)
    return (ops.lumped_mass / tau) * (eta(W) - eta(U)) + ops.coupling @ q - d.matrix(ops) @ eta(U)


def check_max_principle(samples: int = 100, seed: int = 1, bound_slack: float = 1e-12,
                        entropy_slack: float = 1e-10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_bound = 0.0
    worst_entropy = -np.inf
    for name in ("kdv6", "burgers"):
        fl = make_builtin(name)
        for degree in (1, 2, 3):
            ops = _ops(24, degree)
            for _ in range(samples):
                U = random_state(rng, ops)
                d = hyperbolic.compute_graph_viscosity(U, fl, ops)
                tau = hyperbolic.tau_star(d, ops)
                W = hyperbolic.low_order_predict(U, tau, fl, ops, d)
                lo, hi = limiter.local_bounds(U, ops)
                scale = 1.0 + np.max(np.abs(U))
                worst_bound = max(worst_bound, float(np.max(np.maximum(lo - W, W - hi))) / scale)
                res = entropy_row_residual(U, W, tau, d, fl, ops)
                # relative to the size of the terms in the row
                size = (ops.lumped_mass / tau) * np.abs(0.5 * U * U).max() + 1.0
                worst_entropy = max(worst_entropy, float(np.max(res / size)))
    return [
        CheckResult("low-order local bounds at tau*", worst_bound <= bound_slack, max(worst_bound, 0.0), bound_slack),
        CheckResult("square-entropy row inequality", worst_entropy <= entropy_slack, max(worst_entropy, 0.0),
                    entropy_slack),
    ]


# --------------------------------------------------------------------------- limiter


def _fct_sample(U, fl, ops, tau_factor=1.0):
    d = hyperbolic.compute_graph_viscosity(U, fl, ops)
    tau = tau_factor * hyperbolic.tau_star(d, ops)
    policy = hyperbolic.HighOrderViscosityPolicy("zero")
    dH = hyperbolic.high_order_viscosity(d, policy, ops)
    W_L = hyperbolic.low_order_predict(U, tau, fl, ops, d)
    FH = hyperbolic.flux_map(U, fl, dH, ops)
    solver = hyperbolic.MassSolver(ops, method="direct")
    W_H = hyperbolic.high_order_predict(U, [FH], tau, [1.0], ops, solver)
    A = limiter.compute_antidiffusive_fluxes(U, W_H, W_L, tau, ops, hyperbolic.edge_fluxes(U, fl, d, ops),
                                             hyperbolic.edge_fluxes(U, fl, dH, ops))
    return d, tau, W_L, W_H, A


def check_limiter_contract(samples: int = 100, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_bound = worst_mass = worst_recon = worst_collapse = 0.0
    for name in ("kdv6", "burgers"):
        fl = make_builtin(name)
        for degree in (1, 2):
            ops = _ops(24, degree)
            m = ops.lumped_mass
            for _ in range(samples):
                U = random_state(rng, ops)
                d, tau, W_L, W_H, A = _fct_sample(U, fl, ops)
                W = limiter.limit(U, W_L, A, ops)
                lo, hi = limiter.local_bounds(U, ops)
                scale = 1.0 + np.max(np.abs(U))
                worst_bound = max(worst_bound, float(np.max(np.maximum(lo - W, W - hi))) / scale)
                worst_mass = max(worst_mass, abs(m @ W - m @ U) / (m @ np.abs(U)))
                recon = W_L + A.row_sums(ops) / m
                worst_recon = max(worst_recon, float(np.max(np.abs(recon - W_H))) / np.max(np.abs(W_H)))
                # psi = 1 restores the full viscosity, so the high-order flux is the low-order one
                one = hyperbolic.HighOrderViscosityPolicy("scaled", np.ones(m.size))
                FH = hyperbolic.flux_map_high(U, fl, d, one, ops)
                FL = hyperbolic.flux_map_low(U, fl, d, ops)
                worst_collapse = max(worst_collapse, float(np.max(np.abs(FH - FL))))
    return [
        CheckResult("limited state within local bounds", worst_bound <= 1e-12, max(worst_bound, 0.0), 1e-12),
        CheckResult("limiter mass conservation", worst_mass <= 1e-12, worst_mass, 1e-12),
        CheckResult("antidiffusive reconstruction identity", worst_recon <= 1e-11, worst_recon, 1e-11),
        CheckResult("psi = 1 gives F^H = F^L", worst_collapse == 0.0, worst_collapse, 0.0),
    ]


# --------------------------------------------------------------------------- runs


def _run_steps(cfg: harness.RunConfig, steps: int) -> harness.RunResult:
    """Run a fixed number of steps (no final-time clipping)."""
    m, ops, integ = cfg.build()
    U0 = harness.initial_vector(cfg, m)
    state = imex.initial_state(U0, cfg.t0, ops)
    scheme = cfg.scheme if cfg.scheme == "euler_imex" else imex.get_pair(cfg.scheme)
    for _ in range(steps):
        state = integ.step(state, scheme, cfg.cfl)
    return harness.RunResult(cfg, m, state, [])


def check_conservation(steps: int = 50, num_cells: int = 128) -> CheckResult:
    worst = 0.0
    detail = ""
    for name in harness.SCENARIOS:
        for scheme in ("euler_imex", "imex22", "imex33"):
            cfg = harness.RunConfig.for_scenario(name, num_cells=num_cells, scheme=scheme,
                                                 prediction="low" if scheme == "euler_imex" else "fct")
            res = _run_steps(cfg, steps)
            ops = mesh.assemble_operators(res.mesh)
            per_step, total = harness.mass_drift(res.state.diagnostics_array(), ops,
                                                 harness.initial_vector(cfg, res.mesh))
            if max(per_step, total) > worst:
                worst, detail = max(per_step, total), f"{name}/{scheme}"
    return CheckResult("mass conservation (all scenarios and schemes)", worst <= 1e-12, worst, 1e-12, detail)


def check_lumped_stability(steps: int = 1000, num_cells: int = 256) -> CheckResult:
    worst = -np.inf
    detail = ""
    for name in ("single_soliton", "zabusky"):
        cfg = harness.RunConfig.for_scenario(name, num_cells=num_cells, degree=1, scheme="euler_imex",
                                             mass_mode="lumped", prediction="low", cfl=1.0)
        res = _run_steps(cfg, steps)
        growth = harness.norm_increase(res.state.diagnostics_array())
        if growth > worst:
            worst, detail = growth, name
    return CheckResult("lumped Euler-IMEX l2 norm non-increasing", worst <= 1e-12, max(worst, 0.0), 1e-12, detail)


def run_suite(quick: bool = True) -> list[CheckResult]:
    n = 10 if quick else 100
    checks: list[Callable[[], object]] = [
        lambda: check_energy_identity(samples=n),
        lambda: check_max_principle(samples=n),
        lambda: check_limiter_contract(samples=n),
        lambda: check_conservation(steps=10 if quick else 50),
        lambda: check_lumped_stability(steps=100 if quick else 1000),
    ]
    results: list[CheckResult] = []
    for c in checks:
        out = c()
        results.extend(out if isinstance(out, list) else [out])
    return results
