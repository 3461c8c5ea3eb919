"""IMEX time stepping: Euler-IMEX and paired ERK/EDIRK schemes in incremental form."""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable, Literal, Sequence

import numpy as np

from . import dispersive, hyperbolic, limiter
from .dispersive import DispersiveOperator, MassMode
from .flux import FluxModel
from .hyperbolic import CFLViolation, HighOrderViscosityPolicy
from .mesh import FEOperators

ROW_SUM_TOL = 1e-14
# relative excess over tau accepted to land on a target (covered by the CFL slack)
STEP_MERGE_TOL = 1e-12
Prediction = Literal["fct", "low", "high"]


class TableauError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class StageSolveError(RuntimeError):
    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage


class NonFiniteStateError(FloatingPointError):
    """Raised when a step produces NaN or inf; carries the last finite state."""

    def __init__(self, message: str, last_good: "RunState"):
        super().__init__(message)
        self.last_good = last_good


# --------------------------------------------------------------------------- tableaux


@dataclass(frozen=True)
class ButcherPair:
    """Explicit tableau ``(s+1) x s`` and implicit tableau ``(s+1) x (s+1)`` sharing ``c``.

    The last row of each tableau holds the update weights. ``dc_max`` and
    ``equidistributed`` are filled in by :func:`validate_tableau`.
    """

    name: str
    s: int
    a_explicit: np.ndarray
    a_implicit: np.ndarray
    c: np.ndarray
    order: int | None = None
    dc_max: float = float("nan")
    equidistributed: bool = False

    def explicit_increments(self, l: int) -> np.ndarray:
        """``a^e_{l,k} - a^e_{l-1,k}`` for ``k < l`` (0-based stage ``l >= 1``)."""
        ae = self.a_explicit
        return ae[l, :l] - ae[l - 1, :l]

    def implicit_increments(self, l: int) -> np.ndarray:
        ai = self.a_implicit
        return ai[l, :l] - ai[l - 1, :l]

    def full_tableaux(self) -> tuple[np.ndarray, np.ndarray]:
        """Both tableaux as square ``(s+1) x (s+1)`` stiffly accurate Runge-Kutta matrices."""
        ae = np.zeros((self.s + 1, self.s + 1))
        ae[:, : self.s] = self.a_explicit
        return ae, np.array(self.a_implicit, dtype=float)


def validate_tableau(p: ButcherPair) -> ButcherPair:
    """Check shapes and the tableau assumptions; returns a copy with ``dc_max`` set."""
    s = p.s
    if s < 1:
        raise TableauError(f"{p.name}: stage count must be >= 1, got {s}")
    ae = np.asarray(p.a_explicit, dtype=float)
    ai = np.asarray(p.a_implicit, dtype=float)
    c = np.asarray(p.c, dtype=float)
    if ae.shape != (s + 1, s):
        raise TableauError(f"{p.name}: explicit tableau has shape {ae.shape}, expected {(s + 1, s)}")
    if ai.shape != (s + 1, s + 1):
        raise TableauError(f"{p.name}: implicit tableau has shape {ai.shape}, expected {(s + 1, s + 1)}")
    if c.shape != (s + 1,):
        raise TableauError(f"{p.name}: abscissae have shape {c.shape}, expected {(s + 1,)}")
    if not (np.all(np.isfinite(ae)) and np.all(np.isfinite(ai)) and np.all(np.isfinite(c))):
        raise TableauError(f"{p.name}: non-finite coefficient")
    if c[0] != 0.0 or c[-1] != 1.0:
        raise TableauError(f"{p.name}: need c_1 = 0 and c_(s+1) = 1, got {c[0]} and {c[-1]}")
    if np.any(np.diff(c) < 0.0):
        raise TableauError(f"{p.name}: abscissae c are not nondecreasing")
    if np.any(np.triu(ae[:s], 0)):
        raise TableauError(f"{p.name}: explicit tableau is not strictly lower triangular")
    if np.any(np.triu(ai, 1)):
        raise TableauError(f"{p.name}: implicit tableau is not lower triangular")
    if ai[0, 0] != 0.0:
        raise TableauError(f"{p.name}: first implicit stage must be explicit (a^i_11 = 0)")
    diag = np.diag(ai)[1:s]
    if np.any(diag == 0.0):
        raise TableauError(f"{p.name}: implicit diagonal vanishes on an intermediate stage")
    for name, a in (("explicit", ae), ("implicit", ai)):
        err = np.abs(a.sum(axis=1) - c)
        if np.max(err) > ROW_SUM_TOL:
            j = int(np.argmax(err)) + 1
            raise TableauError(f"{p.name}: {name} row {j} sums to {a[j - 1].sum()!r}, expected c_{j} = {c[j - 1]!r}")
    dc_max = float(np.max(np.diff(c)))
    if dc_max < 1.0 / s - ROW_SUM_TOL:
        raise TableauError(f"{p.name}: dc_max = {dc_max} below 1/s")
    equi = bool(np.allclose(c, np.arange(s + 1) / s, rtol=0.0, atol=ROW_SUM_TOL))
    if equi:
        dc_max = 1.0 / s
    return dataclasses.replace(p, a_explicit=ae, a_implicit=ai, c=c, dc_max=dc_max, equidistributed=equi)


def order_condition_residuals(p: ButcherPair) -> dict[str, float]:
    """Residuals of the additive Runge-Kutta order conditions up to order 3.

    Keys are ``"<order>:<condition>"``. Both tableaux are read in stiffly
    accurate form, with the last row as the weights.
    """
    ae, ai = p.full_tableaux()
    be, bi = ae[-1], ai[-1]
    c = np.asarray(p.c, dtype=float)
    res = {
        "1:sum(b^e)": be.sum() - 1.0,
        "1:sum(b^i)": bi.sum() - 1.0,
        "2:b^e.c": be @ c - 0.5,
        "2:b^i.c": bi @ c - 0.5,
        "3:b^e.c^2": be @ c**2 - 1.0 / 3.0,
        "3:b^i.c^2": bi @ c**2 - 1.0 / 3.0,
    }
    for nb, b in (("e", be), ("i", bi)):
        for na, a in (("e", ae), ("i", ai)):
            res[f"3:b^{nb}.A^{na}.c"] = b @ a @ c - 1.0 / 6.0
    return {k: float(v) for k, v in res.items()}


def satisfied_order(p: ButcherPair, tol: float = 1e-13) -> int:
    res = order_condition_residuals(p)
    order = 0
    for q in (1, 2, 3):
        if all(abs(v) <= tol for k, v in res.items() if k.startswith(f"{q}:")):
            order = q
        else:
            break
    return order


def _parse_numbers(tokens: Iterable[str]) -> list[Fraction]:
    try:
        return [Fraction(tok) for tok in tokens]
    except (ValueError, ZeroDivisionError) as exc:
        raise TableauError(f"bad coefficient: {exc}") from exc


def parse_registry(text: str) -> dict[str, ButcherPair]:
    """Parse the plain-text registry format; every entry is validated."""
    blocks: list[dict[str, list[str]]] = []
    current: dict[str, list[str]] = {}
    key = None
    for raw in text.splitlines() + [""]:
        line = raw.split("#", 1)[0].rstrip()
        if raw.strip() and not line.strip():
            continue  # comment-only line
        if not line.strip():
            if current:
                blocks.append(current)
            current, key = {}, None
            continue
        if ":" in line:
            key, _, rest = line.partition(":")
            key = key.strip()
            if key in current:
                raise TableauError(f"duplicate key {key!r}")
            current[key] = rest.split()
        elif key is None:
            raise TableauError(f"continuation line without a key: {raw!r}")
        else:
            current[key].extend(line.split())

    pairs: dict[str, ButcherPair] = {}
    for blk in blocks:
        missing = {"name", "s", "a_explicit", "a_implicit", "c"} - blk.keys()
        if missing:
            raise TableauError(f"registry block missing {sorted(missing)}")
        name = " ".join(blk["name"])
        s = int(blk["s"][0])
        ae = _parse_numbers(blk["a_explicit"])
        ai = _parse_numbers(blk["a_implicit"])
        c = _parse_numbers(blk["c"])
        if len(ae) != (s + 1) * s or len(ai) != (s + 1) ** 2:
            raise TableauError(f"{name}: coefficient count does not match s = {s}")
        pair = ButcherPair(
            name=name,
            s=s,
            a_explicit=np.array([float(x) for x in ae]).reshape(s + 1, s),
            a_implicit=np.array([float(x) for x in ai]).reshape(s + 1, s + 1),
            c=np.array([float(x) for x in c]),
            order=int(blk["order"][0]) if "order" in blk else None,
        )
        if name in pairs:
            raise TableauError(f"duplicate scheme {name!r}")
        pairs[name] = validate_tableau(pair)
    return pairs


@functools.lru_cache(maxsize=1)
def _bundled_registry() -> dict[str, ButcherPair]:
    return parse_registry(resources.files(__package__).joinpath("tableaux.txt").read_text())


def load_registry() -> dict[str, ButcherPair]:
    return dict(_bundled_registry())


def get_pair(name: str) -> ButcherPair:
    pairs = load_registry()
    if name not in pairs:
        raise KeyError(f"unknown scheme {name!r}; available: {', '.join(sorted(pairs))}")
    return pairs[name]


# --------------------------------------------------------------------------- state


@dataclass
class RunState:
    """Time, nodal state and per-step diagnostics ``(t, mass, weighted l2 norm, tau)``."""

    t: float
    U: np.ndarray
    step_index: int = 0
    diagnostics: list[tuple[float, float, float, float]] = field(default_factory=list)

    def copy(self) -> "RunState":
        return RunState(self.t, np.array(self.U, dtype=float), self.step_index, list(self.diagnostics))

    def diagnostics_array(self) -> np.ndarray:
        return np.array(self.diagnostics, dtype=float).reshape(-1, 4)


@dataclass(frozen=True)
class SolverConfig:
    """Physics and stepping options shared by all steps of a run.

    ``prediction`` selects the hyperbolic prediction: ``fct`` limits the
    high-order prediction against the low-order one, ``low`` and ``high`` use
    either prediction alone. ``tau_levels`` snaps step sizes down to the grid
    ``2**(k / tau_levels)`` so factorizations can be reused while ``tau*``
    drifts; 0 disables snapping.
    """

    flux: FluxModel
    eps: float
    c_stab: float | None = None
    mass_mode: MassMode = "consistent"
    prediction: Prediction = "fct"
    viscosity_policy: HighOrderViscosityPolicy = field(default_factory=HighOrderViscosityPolicy)
    tau_max: float | None = None
    efficient: bool = False
    tau_levels: int = 32
    mass_solver: Literal["direct", "cg"] = "direct"
    relax_bounds: bool = False

    def __post_init__(self):
        if self.prediction not in ("fct", "low", "high"):
            raise ConfigurationError(f"unknown prediction {self.prediction!r}")
        if self.tau_max is not None and not (np.isfinite(self.tau_max) and self.tau_max > 0.0):
            raise ConfigurationError(f"tau_max must be positive, got {self.tau_max}")
        if self.tau_levels < 0:
            raise ConfigurationError("tau_levels must be >= 0")


def snap_tau(tau: float, levels: int) -> float:
    """Largest ``2**(k/levels) <= tau``; identity when ``levels == 0``."""
    if levels == 0 or not np.isfinite(tau):
        return tau
    k = math.floor(levels * math.log2(tau))
    snapped = 2.0 ** (k / levels)
    while snapped > tau:
        k -= 1
        snapped = 2.0 ** (k / levels)
    return snapped


def _check_cfl(cfl: float) -> None:
    if not (0.0 < cfl <= 1.0):
        raise ConfigurationError(f"cfl must lie in (0, 1], got {cfl}")


class Integrator:
    """Holds the operators and caches for one discretization and configuration."""

    MAX_RESTARTS = 30
    RESTART_FACTOR = 0.5

    def __init__(self, ops: FEOperators, config: SolverConfig):
        self.ops = ops
        self.config = config
        self.dispersive = DispersiveOperator(ops, config.eps, config.c_stab, max_cached=8)
        self.mass_solver = hyperbolic.MassSolver(ops, method=config.mass_solver)

    # ---- step size

    def admissible_tau(self, U: np.ndarray, cfl: float, dc_max: float,
                       d: hyperbolic.GraphViscosity | None = None) -> float:
        """``cfl * tau* / dc_max``, capped by ``tau_max`` and snapped to the step grid."""
        if d is None:
            d = hyperbolic.compute_graph_viscosity(U, self.config.flux, self.ops)
        tstar = hyperbolic.tau_star(d, self.ops)
        tau = cfl * tstar / dc_max
        if self.config.tau_max is not None:
            tau = min(tau, self.config.tau_max)
        if not np.isfinite(tau):
            raise ConfigurationError("no graph viscosity (tau* is unbounded) and no tau_max configured")
        return snap_tau(tau, self.config.tau_levels)

    # ---- hyperbolic pieces

    def _predict(self, U, tau_low, d, F_hist, edges_hist, deltas, tau):
        """Hyperbolic prediction for one stage; returns ``W``."""
        cfg = self.config
        ops = self.ops
        if cfg.prediction == "low":
            return hyperbolic.low_order_predict(U, tau_low, cfg.flux, ops, d, check_cfl=False)
        W_H = hyperbolic.high_order_predict(U, F_hist, tau, deltas, ops, self.mass_solver)
        if cfg.prediction == "high":
            return W_H
        W_L = hyperbolic.low_order_predict(U, tau_low, cfg.flux, ops, d, check_cfl=False)
        low_edge = tau_low / tau * hyperbolic.edge_fluxes(U, cfg.flux, d, ops)
        high_edge = np.zeros_like(low_edge)
        for coef, e in zip(deltas, edges_hist):
            if coef != 0.0:
                high_edge += coef * e
        A = limiter.compute_antidiffusive_fluxes(U, W_H, W_L, tau, ops, low_edge, high_edge)
        bounds = limiter.relaxed_bounds(U, ops) if cfg.relax_bounds else None
        return limiter.limit(U, W_L, A, ops, bounds)

    def _high_flux(self, U, d):
        cfg = self.config
        dH = hyperbolic.high_order_viscosity(d, cfg.viscosity_policy, self.ops)
        F = hyperbolic.flux_map(U, cfg.flux, dH, self.ops)
        edges = hyperbolic.edge_fluxes(U, cfg.flux, dH, self.ops) if cfg.prediction == "fct" else None
        return F, edges

    # ---- steps

    def euler_step(self, state: RunState, cfl: float, tau: float | None = None) -> RunState:
        """One Euler-IMEX step; ``tau`` overrides the CFL-based step (it must not exceed ``tau*``)."""
        _check_cfl(cfl)
        U = np.asarray(state.U, dtype=float)
        cfg = self.config
        d = hyperbolic.compute_graph_viscosity(U, cfg.flux, self.ops)
        if tau is None:
            tau = self.admissible_tau(U, cfl, 1.0, d)
        elif tau > hyperbolic.tau_star(d, self.ops) * (1.0 + hyperbolic.CFL_SLACK):
            raise CFLViolation(f"step {tau:.6e} exceeds tau* = {hyperbolic.tau_star(d, self.ops):.6e}")
        if cfg.prediction == "low":
            W = hyperbolic.low_order_predict(U, tau, cfg.flux, self.ops, d, check_cfl=False)
        else:
            F, edges = self._high_flux(U, d)
            W = self._predict(U, tau, d, [F], [edges], [1.0], tau)
        try:
            U_new, _ = dispersive.stage_dispersive_solve(self.dispersive, W, [], tau, [], 1.0, cfg.mass_mode)
        except Exception as exc:
            raise StageSolveError(2, exc) from exc
        return self._advance(state, U_new, tau)

    def imex_step(self, state: RunState, pair: ButcherPair, cfl: float, tau: float | None = None) -> RunState:
        """One step of the paired scheme. Stage CFL failures halve ``tau`` and restart the step."""
        _check_cfl(cfl)
        U = np.asarray(state.U, dtype=float)
        if tau is None:
            tau = self.admissible_tau(U, cfl, pair.dc_max)
        for _ in range(self.MAX_RESTARTS):
            try:
                U_new = self._imex_stages(U, pair, tau)
            except CFLViolation:
                tau = snap_tau(self.RESTART_FACTOR * tau, self.config.tau_levels)
                continue
            return self._advance(state, U_new, tau)
        raise CFLViolation(f"stage CFL condition still violated after {self.MAX_RESTARTS} restarts (tau = {tau:.3e})")

    def _imex_stages(self, U: np.ndarray, pair: ButcherPair, tau: float) -> np.ndarray:
        cfg = self.config
        ops = self.ops
        s = pair.s
        # maximally efficient mode: stage step tau/s with coefficients scaled by s
        scale = s if (cfg.efficient and pair.equidistributed) else 1
        h = tau / scale
        stages = [U]
        Z_hist: list[np.ndarray | None] = [None]
        G_hist: list[np.ndarray | None] = [None]
        F_hist: list[np.ndarray] = []
        edge_hist: list[np.ndarray | None] = []
        for l in range(1, s + 1):
            U_prev = stages[l - 1]
            d = hyperbolic.compute_graph_viscosity(U_prev, cfg.flux, ops)
            dc = scale * (pair.c[l] - pair.c[l - 1])
            tstar = hyperbolic.tau_star(d, ops)
            if h * dc > tstar * (1.0 + hyperbolic.CFL_SLACK):
                raise CFLViolation(f"stage {l + 1}: step {h * dc:.6e} exceeds tau* = {tstar:.6e}")
            F, edges = self._high_flux(U_prev, d)
            F_hist.append(F)
            edge_hist.append(edges)
            de = scale * pair.explicit_increments(l)
            if dc == 0.0 and not np.any(de):
                W = np.array(U_prev)
            elif cfg.prediction == "low":
                W = hyperbolic.low_order_predict(U_prev, h * dc, cfg.flux, ops, d, check_cfl=False)
            else:
                W = self._predict(U_prev, h * dc, d, F_hist, edge_hist, de, h)

            di = scale * pair.implicit_increments(l)
            for k in range(l):
                if di[k] != 0.0 and G_hist[k] is None:
                    Zk = Z_hist[k]
                    G_hist[k] = (self.dispersive.apply_G(stages[k]) if Zk is None
                                 else self.dispersive.G_from(stages[k], Zk))
            G_used = [G_hist[k] if di[k] != 0.0 else np.zeros(0) for k in range(l)]
            try:
                U_l, Z_l = dispersive.stage_dispersive_solve(
                    self.dispersive, W, G_used, h, di, scale * pair.a_implicit[l, l], cfg.mass_mode)
            except Exception as exc:
                raise StageSolveError(l + 1, exc) from exc
            stages.append(U_l)
            Z_hist.append(Z_l)
            G_hist.append(None)
        return stages[-1]

    def _advance(self, state: RunState, U_new: np.ndarray, tau: float) -> RunState:
        t = state.t + tau
        new = RunState(t, U_new, state.step_index + 1, state.diagnostics)
        if not np.all(np.isfinite(U_new)):
            raise NonFiniteStateError(f"non-finite state at step {new.step_index} (t = {t:.6g})", state)
        new.diagnostics.append((t, float(self.ops.lumped_mass @ U_new),
                                float(np.sqrt(self.ops.lumped_mass @ (U_new * U_new))), tau))
        return new

    def step(self, state: RunState, scheme: "str | ButcherPair", cfl: float, tau: float | None = None) -> RunState:
        if isinstance(scheme, str):
            if scheme == "euler_imex":
                return self.euler_step(state, cfl, tau)
            scheme = get_pair(scheme)
        return self.imex_step(state, scheme, cfl, tau)


def euler_imex_step(state: RunState, cfl: float, config: SolverConfig, ops: FEOperators,
                    integrator: Integrator | None = None) -> RunState:
    return (integrator or Integrator(ops, config)).euler_step(state, cfl)


def imex_step(state: RunState, pair: ButcherPair, cfl: float, config: SolverConfig, ops: FEOperators,
              integrator: Integrator | None = None) -> RunState:
    return (integrator or Integrator(ops, config)).imex_step(state, pair, cfl)


def initial_state(U0: np.ndarray, t0: float, ops: FEOperators) -> RunState:
    U0 = np.array(U0, dtype=float)
    m = ops.lumped_mass
    return RunState(t0, U0, 0, [(t0, float(m @ U0), float(np.sqrt(m @ (U0 * U0))), 0.0)])


def run_to_time(
    state0: RunState,
    scheme: "str | ButcherPair",
    T: float,
    cfl: float,
    integrator: Integrator,
    snapshot_times: Sequence[float] = (),
    max_steps: int | None = None,
) -> tuple[RunState, list[tuple[float, np.ndarray]]]:
    """Advance to ``T`` landing exactly on ``T`` and on every snapshot time.

    Returns the final state and ``(t, U)`` snapshots in increasing time.
    """
    if not T >= state0.t:
        raise ValueError(f"final time {T} precedes the initial time {state0.t}")
    if isinstance(scheme, str) and scheme != "euler_imex":
        scheme = get_pair(scheme)
    requested = {float(t) for t in snapshot_times}
    targets = sorted({t for t in requested if state0.t < t < T} | {float(T)})
    snaps: list[tuple[float, np.ndarray]] = []
    if state0.t in requested:
        snaps.append((state0.t, np.array(state0.U)))
    state = state0
    if T == state0.t:
        return state, snaps
    dc_max = 1.0 if isinstance(scheme, str) else scheme.dc_max
    for target in targets:
        while state.t < target:
            tau = integrator.admissible_tau(state.U, cfl, dc_max)
            remaining = target - state.t
            # a remainder within roundoff of tau is merged into this step
            last = remaining <= tau * (1.0 + STEP_MERGE_TOL)
            state = integrator.step(state, scheme, cfl, remaining if last else tau)
            # land exactly on the target unless a stage restart shortened the step
            if last and state.diagnostics[-1][3] == remaining:
                state.t = target
                state.diagnostics[-1] = (target,) + state.diagnostics[-1][1:]
            if max_steps is not None and state.step_index >= max_steps:
                raise RuntimeError(f"step budget {max_steps} exhausted at t = {state.t:.6g}")
        if target in requested:
            snaps.append((state.t, np.array(state.U)))
    return state, snaps
