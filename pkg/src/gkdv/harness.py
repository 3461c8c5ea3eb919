"""Scenarios, run configuration, convergence studies and CSV output."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import imex, mesh
from .flux import FluxModel, make_builtin
from .hyperbolic import HighOrderViscosityPolicy

MASS_DRIFT_TOL = 1e-12
NORM_SLACK = 1e-12

InitialCondition = Callable[[np.ndarray], np.ndarray]
ExactSolution = Callable[[float, np.ndarray], np.ndarray]


# --------------------------------------------------------------------------- scenarios


def _sech2(x):
    return 1.0 / np.cosh(x) ** 2


def single_soliton_exact(t: float, x: np.ndarray) -> np.ndarray:
    return 2.0 * _sech2(np.asarray(x, dtype=float) - 4.0 * t)


def two_soliton_exact(t: float, x: np.ndarray) -> np.ndarray:
    """Two-soliton solution, evaluated with every exponential scaled by the dominant one.

    With ``c = x - 28t`` and ``d = 3x - 36t`` the numerator arguments are
    ``d - c`` and ``c + d``, so dividing through by ``exp(2 max(|c|, |d|))``
    leaves only non-positive exponents.
    """
    x = np.asarray(x, dtype=float)
    c = x - 28.0 * t
    d = 3.0 * x - 36.0 * t
    a = d - c
    b = c + d
    m = np.maximum(np.abs(c), np.abs(d))
    num = (3.0 * np.exp(-2.0 * m) + 2.0 * (np.exp(a - 2.0 * m) + np.exp(-a - 2.0 * m))
           + 0.5 * (np.exp(b - 2.0 * m) + np.exp(-b - 2.0 * m)))
    den = 1.5 * (np.exp(c - m) + np.exp(-c - m)) + 0.5 * (np.exp(d - m) + np.exp(-d - m))
    return 12.0 * num / den**2


def three_soliton_initial(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 4.0 * _sech2(math.sqrt(2.0) * x) + 2.0 * _sech2(x - 7.0) + _sech2((x - 15.0) / math.sqrt(2.0))


@dataclass(frozen=True)
class Scenario:
    name: str
    initial: InitialCondition
    exact: Optional[ExactSolution]
    defaults: dict
    description: str = ""

    def initial_at(self, t0: float) -> InitialCondition:
        """Initial data at ``t0``: the exact solution when known, otherwise ``initial``."""
        if self.exact is not None:
            return lambda x: self.exact(t0, x)
        return self.initial


ZABUSKY_DELTA = 0.022

SCENARIOS: dict[str, Scenario] = {
    "single_soliton": Scenario(
        "single_soliton",
        lambda x: single_soliton_exact(0.0, x),
        single_soliton_exact,
        dict(domain=(-10.0, 10.0), flux="kdv6", eps=1.0, T=0.5, scheme="imex33", degree=2,
             num_cells=512, cfl=0.25),
        "u = 2 sech^2(x - 4t) for u_t + (3u^2)_x + u_xxx = 0",
    ),
    "two_soliton": Scenario(
        "two_soliton",
        lambda x: two_soliton_exact(0.0, x),
        two_soliton_exact,
        dict(domain=(-10.0, 20.0), flux="kdv6", eps=1.0, T=0.5, scheme="imex33", degree=2,
             num_cells=1024, cfl=0.25),
        "6 sech^2(x) splitting into two solitons; exact solution known",
    ),
    "zabusky": Scenario(
        "zabusky",
        lambda x: np.cos(np.pi * np.asarray(x, dtype=float)),
        None,
        dict(domain=(0.0, 2.0), flux="burgers", eps=ZABUSKY_DELTA**2, T=3.6 / math.pi, scheme="imex33",
             degree=2, num_cells=512, cfl=0.25),
        "u0 = cos(pi x) with u_t + u u_x + delta^2 u_xxx = 0, delta = 0.022",
    ),
    "three_soliton": Scenario(
        "three_soliton",
        three_soliton_initial,
        None,
        dict(domain=(-5.0, 45.0), flux="kdv6", eps=1.0, T=5.0, scheme="imex33", degree=1,
             num_cells=2048, cfl=0.25),
        "three superimposed solitons in descending amplitude",
    ),
}


def scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}") from None


# --------------------------------------------------------------------------- config


def parse_flux(spec: str) -> FluxModel:
    """``name`` or ``name:key=value,...``, e.g. ``poly_p:p=3``."""
    name, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"bad flux parameter {item!r} in {spec!r}")
        params[key.strip()] = float(value)
    return make_builtin(name.strip(), **params)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def read_config_items(text: str) -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    items = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        items[key.strip()] = value.strip()
    return items


@dataclass
class RunConfig:
    """Everything needed to reproduce one run. ``c_stab = None`` means ``1 / |D|``.

    ``prediction`` is the limiter switch: ``fct`` limits the high-order
    prediction, ``low`` and ``high`` use one prediction without limiting.
    ``psi`` is ``None`` for a zero high-order viscosity or a constant in [0, 1].
    """

    scenario: str = "single_soliton"
    domain: tuple[float, float] = (-10.0, 10.0)
    num_cells: int = 512
    degree: int = 2
    flux: str = "kdv6"
    eps: float = 1.0
    c_stab: Optional[float] = None
    scheme: str = "imex33"
    cfl: float = 0.25
    t0: float = 0.0
    T: float = 0.5
    snapshot_times: tuple[float, ...] = ()
    mass_mode: str = "consistent"
    output_dir: str = "out"
    prediction: str = "fct"
    psi: Optional[float] = None
    relax_bounds: bool = False
    efficient: bool = False
    tau_levels: int = 32
    tau_max: Optional[float] = None

    _PARSERS = {
        "domain": lambda v: tuple(_floats(v)),
        "num_cells": int,
        "degree": int,
        "eps": float,
        "c_stab": _opt_float,
        "cfl": float,
        "t0": float,
        "T": float,
        "snapshot_times": _floats,
        "psi": _opt_float,
        "relax_bounds": _bool,
        "efficient": _bool,
        "tau_levels": int,
        "tau_max": _opt_float,
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.domain = tuple(float(v) for v in self.domain)
        self.snapshot_times = tuple(float(v) for v in self.snapshot_times)
        if len(self.domain) != 2 or not self.domain[1] > self.domain[0]:
            raise ValueError(f"domain must be (a, b) with b > a, got {self.domain}")
        values = [*self.domain, self.eps, self.cfl, self.t0, self.T, *self.snapshot_times]
        values += [v for v in (self.c_stab, self.psi, self.tau_max) if v is not None]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("configuration holds a non-finite value")
        if not self.T >= self.t0:
            raise ValueError(f"final time {self.T} precedes t0 = {self.t0}")
        if self.mass_mode not in ("consistent", "lumped"):
            raise ValueError(f"unknown mass mode {self.mass_mode!r}")
        if self.prediction not in ("fct", "low", "high"):
            raise ValueError(f"unknown prediction {self.prediction!r}")
        if self.scheme != "euler_imex" and self.scheme not in imex.load_registry():
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @classmethod
    def for_scenario(cls, name: str, **overrides) -> "RunConfig":
        defaults = dict(scenario(name).defaults)
        defaults.update(overrides)
        return cls(scenario=name, **defaults)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ---- key = value text form

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                text = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            elif v is None:
                text = "none"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_items(cls, items: dict[str, str]) -> dict:
        names = {f.name for f in dataclasses.fields(cls)}
        out = {}
        for key, raw in items.items():
            if key not in names:
                raise ValueError(f"unknown configuration key {key!r}")
            out[key] = cls._PARSERS.get(key, str)(raw.strip())
        return out

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        values = cls.parse_items(read_config_items(text))
        values.update(overrides)
        return cls(**values)

    # ---- solver objects

    def build(self) -> tuple[mesh.Mesh, mesh.FEOperators, imex.Integrator]:
        m = mesh.build_mesh(self.domain[0], self.domain[1], self.num_cells, self.degree)
        ops = mesh.assemble_operators(m)
        if self.psi is None:
            policy = HighOrderViscosityPolicy("zero")
        else:
            policy = HighOrderViscosityPolicy("scaled", np.full(m.num_dofs, float(self.psi)))
        cfg = imex.SolverConfig(
            flux=parse_flux(self.flux),
            eps=self.eps,
            c_stab=self.c_stab,
            mass_mode=self.mass_mode,
            prediction=self.prediction,
            viscosity_policy=policy,
            tau_max=self.tau_max,
            efficient=self.efficient,
            tau_levels=self.tau_levels,
            relax_bounds=self.relax_bounds,
        )
        return m, ops, imex.Integrator(ops, cfg)


# --------------------------------------------------------------------------- runs


@dataclass
class Monitor:
    name: str
    passed: bool
    value: float
    limit: float


@dataclass
class RunResult:
    config: RunConfig
    mesh: mesh.Mesh
    state: imex.RunState
    snapshots: list[tuple[float, np.ndarray]]
    monitors: list[Monitor] = field(default_factory=list)
    error: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.monitors)


def mass_drift(diagnostics: np.ndarray, ops: mesh.FEOperators, U0: np.ndarray) -> tuple[float, float]:
    """Largest per-step and end-to-end mass change, relative to ``sum_i m_i |U0_i|``.

    The absolute scale is used because the total mass may vanish (cosine data).
    """
    scale = float(ops.lumped_mass @ np.abs(U0))
    if scale == 0.0:
        scale = 1.0
    mass = diagnostics[:, 1]
    per_step = float(np.max(np.abs(np.diff(mass)), initial=0.0)) / scale
    total = float(np.max(np.abs(mass - mass[0]))) / scale
    return per_step, total


def norm_increase(diagnostics: np.ndarray) -> float:
    """Largest relative step-to-step growth of the weighted l2 norm."""
    norms = diagnostics[:, 2]
    if norms.size < 2:
        return 0.0
    return float(np.max((norms[1:] - norms[:-1]) / np.maximum(norms[:-1], 1e-300)))


def initial_vector(cfg: RunConfig, m: mesh.Mesh) -> np.ndarray:
    return mesh.interpolate(scenario(cfg.scenario).initial_at(cfg.t0), m)


def run(cfg: RunConfig, U0: Optional[np.ndarray] = None, max_steps: Optional[int] = None) -> RunResult:
    """Run one configuration and evaluate the in-run invariant monitors."""
    m, ops, integrator = cfg.build()
    if U0 is None:
        U0 = initial_vector(cfg, m)
    state0 = imex.initial_state(U0, cfg.t0, ops)
    state, snaps = imex.run_to_time(state0, cfg.scheme, cfg.T, cfg.cfl, integrator, cfg.snapshot_times,
                                    max_steps=max_steps)
    result = RunResult(cfg, m, state, snaps)
    diag = state.diagnostics_array()
    per_step, total = mass_drift(diag, ops, U0)
    result.monitors.append(Monitor("mass_drift_per_step", per_step <= MASS_DRIFT_TOL, per_step, MASS_DRIFT_TOL))
    result.monitors.append(Monitor("mass_drift_total", total <= MASS_DRIFT_TOL, total, MASS_DRIFT_TOL))
    if cfg.scheme == "euler_imex" and cfg.mass_mode == "lumped" and cfg.prediction == "low":
        growth = norm_increase(diag)
        result.monitors.append(Monitor("l2_norm_nonincreasing", growth <= NORM_SLACK, growth, NORM_SLACK))
    exact = scenario(cfg.scenario).exact
    if exact is not None:
        result.error = mesh.relative_linf_error(state.U, exact, m, state.t)
    return result


# --------------------------------------------------------------------------- convergence


@dataclass
class ConvergenceRow:
    dofs: int
    num_cells: int
    error: float
    rate: Optional[float]


@dataclass
class ConvergenceReport:
    scheme: str
    degree: int
    cfl: float
    T: float
    domain: tuple[float, float]
    rows: list[ConvergenceRow] = field(default_factory=list)
    complete: bool = True
    failure: Optional[str] = None

    def add(self, dofs: int, num_cells: int, error: float) -> None:
        rate = None
        if self.rows:
            rate = math.log2(self.rows[-1].error / error)
        self.rows.append(ConvergenceRow(dofs, num_cells, error, rate))

    @property
    def errors(self) -> list[float]:
        return [r.error for r in self.rows]

    @property
    def rates(self) -> list[Optional[float]]:
        return [r.rate for r in self.rows]

    def error_at(self, dofs: int) -> float:
        for r in self.rows:
            if r.dofs == dofs:
                return r.error
        raise KeyError(f"no row with {dofs} DOFs")

    def to_text(self) -> str:
        head = (f"scheme={self.scheme} P{self.degree} cfl={self.cfl:g} T={self.T:g} "
                f"D=({self.domain[0]:g},{self.domain[1]:g})")
        lines = [head, f"{'#Dofs':>8}  {'err_inf':>10}  {'rate':>6}"]
        for r in self.rows:
            rate = "--" if r.rate is None else f"{r.rate:.2f}"
            lines.append(f"{r.dofs:>8}  {r.error:>10.3e}  {rate:>6}")
        if not self.complete:
            lines.append(f"INCOMPLETE: {self.failure}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dofs", "num_cells", "err_inf", "rate"])
            for r in self.rows:
                w.writerow([r.dofs, r.num_cells, repr(r.error), "" if r.rate is None else repr(r.rate)])
        (out_dir / "convergence.txt").write_text(self.to_text())


def convergence_study(base: RunConfig, num_refinements: int,
                      progress: Optional[Callable[[ConvergenceRow], None]] = None) -> ConvergenceReport:
    """Dyadic refinements of ``base.num_cells``; stops and flags the report on failure."""
    if scenario(base.scenario).exact is None:
        raise ValueError(f"scenario {base.scenario!r} has no exact solution")
    report = ConvergenceReport(base.scheme, base.degree, base.cfl, base.T, base.domain)
    for r in range(num_refinements + 1):
        cfg = base.replace(num_cells=base.num_cells * 2**r, snapshot_times=())
        try:
            res = run(cfg)
        except Exception as exc:  # keep what was computed so far
            report.complete = False
            report.failure = f"{cfg.num_cells} cells: {type(exc).__name__}: {exc}"
            break
        report.add(res.mesh.reported_dofs, cfg.num_cells, res.error)
        if progress is not None:
            progress(report.rows[-1])
    return report


# --------------------------------------------------------------------------- output


def count_local_maxima(profile: np.ndarray, threshold: float) -> int:
    """Strict local maxima above ``threshold`` of a periodic nodal profile.

    A flat top of several equal values counts once when it is higher than both
    of its neighbours.
    """
    u = np.asarray(profile, dtype=float)
    n = u.size
    if n < 3:
        return 0
    # collapse runs of equal values so plateaus act like single nodes
    keep = np.r_[True, u[1:] != u[:-1]]
    v = u[keep]
    if v.size > 1 and v[0] == v[-1]:
        v = v[:-1]
    if v.size < 3:
        return 0
    left = np.roll(v, 1)
    right = np.roll(v, -1)
    return int(np.count_nonzero((v > left) & (v > right) & (v > threshold)))


def nodal_profile(U: np.ndarray, m: mesh.Mesh) -> tuple[np.ndarray, np.ndarray]:
    """DOF coordinates and values ordered by position."""
    order = np.argsort(m.dof_coords, kind="stable")
    return m.dof_coords[order], np.asarray(U)[order]


def write_profile(path: Path, t: float, U: np.ndarray, m: mesh.Mesh) -> None:
    x, u = nodal_profile(U, m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for xi, ui in zip(x, u):
            w.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])


def read_profile(path: Path, m: mesh.Mesh) -> tuple[float, np.ndarray]:
    """Inverse of :func:`write_profile`; returns ``(t, U)`` in DOF order."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != m.num_dofs:
        raise ValueError(f"{path}: {len(rows)} rows for a mesh with {m.num_dofs} DOFs")
    ts = {float(r["t"]) for r in rows}
    if len(ts) != 1:
        raise ValueError(f"{path}: profile mixes several times")
    x = np.array([float(r["x"]) for r in rows])
    u = np.array([float(r["u"]) for r in rows])
    order = np.argsort(m.dof_coords, kind="stable")
    if np.max(np.abs(x - m.dof_coords[order])) > 1e-12 * max(1.0, m.length):
        raise ValueError(f"{path}: node coordinates do not match the mesh")
    U = np.empty_like(u)
    U[order] = u
    return ts.pop(), U


def emit_outputs(result: RunResult, out_dir: Path, report: Optional[ConvergenceReport] = None) -> list[Path]:
    """Write profile CSVs (one per snapshot), the diagnostics CSV and the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (t, U) in enumerate(result.snapshots):
        path = out_dir / f"profile_{k:03d}.csv"
        write_profile(path, t, U, result.mesh)
        written.append(path)
    path = out_dir / "diagnostics.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mass", "l2_norm", "tau"])
        for row in result.state.diagnostics:
            w.writerow([repr(float(v)) for v in row])
    written.append(path)
    if report is not None:
        report.write(out_dir)
        written += [out_dir / "convergence.csv", out_dir / "convergence.txt"]
    return written
