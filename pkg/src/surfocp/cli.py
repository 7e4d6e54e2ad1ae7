"""Command line interface: ``surfocp <subcommand> --config cfg.json --out result``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _load(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _grid(cfg, mesh):
    from .assembly import TimeGrid

    g = cfg.get("grid", {})
    T = float(g.get("T", 1.0))
    if "N" in g:
        return TimeGrid.uniform(T, int(g["N"]))
    C, p = float(g.get("C", 1.0)), float(g.get("p", 2.0))
    return TimeGrid.uniform(T, max(1, math.ceil(T / (C * mesh.h**p) - 1e-9)))


def _setup(cfg):
    from .mesh import build_icosphere
    from .motion import MotionSpec

    mesh = build_icosphere(int(cfg.get("mesh", {}).get("level", 2)))
    grid = _grid(cfg, mesh)
    motion = MotionSpec.from_config(cfg.get("motion"), grid.T).validate()
    return mesh, motion, grid


def cmd_mesh(args, cfg):
    from .mesh import build_icosphere

    level = args.level if args.level is not None else int(cfg.get("mesh", {}).get("level", 2))
    mesh = build_icosphere(level)
    _write(_dump(mesh.to_dict()), args.out)
    return EXIT_OK


def cmd_solve_state(args, cfg):
    import numpy as np

    from .state import ParabolicSystem, solve_state, state_residual

    mesh, motion, grid = _setup(cfg)
    basis = cfg.get("control_basis", [])
    system = ParabolicSystem(mesh, motion, grid, basis)
    u = np.broadcast_to(np.asarray(cfg.get("u", 0.0), float), (grid.N, system.m)) if system.m else None
    traj = solve_state(None, None, None, u, cfg.get("y0", 1.0), system=system)
    res = state_residual(system, traj, u)
    out = {"N": grid.N, "J": mesh.n_nodes, "residual": res, "min": float(traj.Y.min()),
           "max": float(traj.Y.max()), "state": traj.to_dict(cfg.get("trajectories", "final"))}
    _write(_dump(out), args.out)
    return EXIT_OK if res <= 1e-10 else EXIT_FAIL


def cmd_solve_ocp(args, cfg):
    from .ocp import OcpOptions, OcpProblem, solve_ocp

    mesh, motion, grid = _setup(cfg)
    pr = OcpProblem(mesh, motion, grid, float(cfg.get("alpha", 1e-2)), cfg.get("control_basis", [1.0]),
                    cfg.get("y0", 1.0), cfg.get("y_g", 0.0))
    sol = solve_ocp(pr, OcpOptions.from_config(cfg.get("tolerances")))
    out = sol.to_dict(cfg.get("trajectories", "none"))
    out["scales"] = sol.scales
    _write(_dump(out), args.out)
    return EXIT_OK


def cmd_convergence(args, cfg, default_study, allowed):
    from .harness import ExperimentConfig, emit_report, run_study

    cfg = dict(cfg)
    cfg.setdefault("study", default_study)
    if cfg["study"] not in allowed:
        raise ValueError(f"study {cfg['study']!r} not handled by this subcommand")
    table = run_study(ExperimentConfig.from_dict(cfg), threads=args.threads)
    text = emit_report(table, args.format)
    _write(text, args.out)
    for c in table.checks:
        logging.getLogger("surfocp").info("%s: value=%s threshold=%s passed=%s", c["name"], c["value"],
                                          c["threshold"], c["passed"])
    return EXIT_OK if table.passed else EXIT_FAIL


def cmd_selftest(args, cfg):
    from .selftest import run_selftest

    report = run_selftest(args.seed)
    _write(_dump(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="surfocp", description="Surface PDE optimal control solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("mesh", "solve-state", "solve-ocp", "convergence-state", "convergence-ocp", "selftest"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", help="output path (stdout if omitted)")
        s.add_argument("--format", choices=("csv", "json"), default="json")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "mesh":
            s.add_argument("--level", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from threadpoolctl import threadpool_limits

    handlers = {
        "mesh": cmd_mesh,
        "solve-state": cmd_solve_state,
        "solve-ocp": cmd_solve_ocp,
        "convergence-state": lambda a, c: cmd_convergence(a, c, "state_mms", ("state_mms", "state_dilation")),
        "convergence-ocp": lambda a, c: cmd_convergence(a, c, "ocp_reference", ("ocp_reference", "ocp_multiplier")),
        "selftest": cmd_selftest,
    }
    try:
        cfg = _load(args.config)
        with threadpool_limits(limits=max(1, args.threads)):
            return handlers[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("surfocp").error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
