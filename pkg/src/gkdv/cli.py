"""Command line entry point: ``gkdv run | converge | scenarios | check``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, invariants

log = logging.getLogger("gkdv")

# flag name -> RunConfig field; values are parsed like config-file values
_OVERRIDES = {
    "domain": "domain",
    "cells": "num_cells",
    "degree": "degree",
    "flux": "flux",
    "eps": "eps",
    "c-stab": "c_stab",
    "scheme": "scheme",
    "cfl": "cfl",
    "t0": "t0",
    "T": "T",
    "snapshots": "snapshot_times",
    "mass-mode": "mass_mode",
    "out": "output_dir",
    "prediction": "prediction",
    "psi": "psi",
    "relax-bounds": "relax_bounds",
    "efficient": "efficient",
    "tau-levels": "tau_levels",
    "tau-max": "tau_max",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--scenario", help="scenario name (defaults come from the scenario)")
    for flag, name in _OVERRIDES.items():
        p.add_argument(f"--{flag}", dest=name, metavar=name.upper(),
                       help=f"override '{name}' (same syntax as the config file)")


def config_from_args(args: argparse.Namespace) -> harness.RunConfig:
    """Scenario defaults, then the config file, then command line flags."""
    items = harness.read_config_items(args.config.read_text()) if args.config is not None else {}
    for name in _OVERRIDES.values():
        value = getattr(args, name, None)
        if value is not None:
            items[name] = value
    scenario = args.scenario or items.pop("scenario", "single_soliton").strip()
    items.pop("scenario", None)
    return harness.RunConfig.for_scenario(scenario, **harness.RunConfig.parse_items(items))


def cmd_scenarios(args) -> int:
    for name, sc in harness.SCENARIOS.items():
        d = sc.defaults
        exact = "exact solution" if sc.exact is not None else "no exact solution"
        print(f"{name:15s} D=({d['domain'][0]:g},{d['domain'][1]:g}) T={d['T']:.6g} flux={d['flux']} "
              f"eps={d['eps']:g} ({exact})")
        print(f"{'':15s} {sc.description}")
    return 0


def _print_monitors(result: harness.RunResult) -> None:
    for m in result.monitors:
        status = "PASS" if m.passed else "FAIL"
        print(f"{status} {m.name}: {m.value:.3e} (limit {m.limit:.0e})")


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    out = Path(cfg.output_dir)
    U0 = None
    if args.restart is not None:
        m, _, _ = cfg.build()
        t0, U0 = harness.read_profile(args.restart, m)
        cfg = cfg.replace(t0=t0, snapshot_times=tuple(t for t in cfg.snapshot_times if t > t0))
    result = harness.run(cfg, U0=U0)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    harness.emit_outputs(result, out)
    print(f"{cfg.scenario}: {cfg.scheme} P{cfg.degree} {result.mesh.reported_dofs} DOFs, "
          f"{result.state.step_index} steps to t = {result.state.t:.6g}")
    if result.error is not None:
        print(f"err_inf({result.state.t:.6g}) = {result.error:.3e}")
    _print_monitors(result)
    return 0 if result.passed else 1


def cmd_converge(args) -> int:
    cfg = config_from_args(args)
    report = harness.convergence_study(
        cfg, args.refinements, progress=lambda row: log.info("%d DOFs: err %.3e", row.dofs, row.error))
    report.write(Path(cfg.output_dir))
    print(report.to_text(), end="")
    return 0 if report.complete else 1


def cmd_check(args) -> int:
    results = invariants.run_suite(quick=not args.full)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkdv", description="IMEX finite element solver for gKdV equations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration and write CSV output")
    _add_config_args(p)
    p.add_argument("--restart", type=Path, help="profile CSV to restart from (sets t0 and the state)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", help="dyadic mesh refinement study")
    _add_config_args(p)
    p.add_argument("--refinements", type=int, default=3)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("scenarios", help="list the built-in scenarios")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--full", action="store_true", help="use the full sample counts")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
