"""Command-line front end.

Exit codes: 0 success, 1 runtime abort, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fem
from .config import (
    MEASUREMENT_SCENARIO,
    ConfigError,
    build_run_config,
    format_config,
    parse_config,
    read_config,
)
from .experiments import PRESETS
from .fem import SolverError, SolverOptions
from .mesh import Ellipse, MeshError, generate_mesh, read_mesh, triangle_quality, write_mesh
from .optimizer import IterationRecord, IterationState, run_optimization
from .output import write_history_csv, write_summary, write_vtk
from .shape_calculus import generate_target, write_target
from .stochastics import Scenario

logger = logging.getLogger("stochshape")

EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str, n_min: int, n_max: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not n_min <= len(vals) <= n_max:
        raise UsageError(f"{what}: expected {n_min}..{n_max} numbers, got {len(vals)}")
    return vals


def _quality_line(mesh) -> str:
    q = triangle_quality(mesh)
    return (
        f"aspect ratio min {q.min_ratio:.4f} mean {q.mean_ratio:.4f} max {q.max_ratio:.4f}, "
        f"inverted {q.inverted}"
    )


# subcommands -------------------------------------------------------------


def cmd_mesh_gen(args) -> int:
    inclusions = [Ellipse.circle(*_floats(c, 3, 3, "--circle")) for c in args.circle or []]
    inclusions += [Ellipse(*_floats(e, 4, 5, "--ellipse")) for e in args.ellipse or []]
    mesh = generate_mesh(args.resolution, inclusions)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"{mesh.n_regions - 1} inclusions")
    print(_quality_line(mesh))
    return EXIT_OK


def cmd_generate_target(args) -> int:
    mesh = read_mesh(args.mesh)
    scenario = Scenario((args.kappa0, args.kappa_int), args.g, args.f)
    target = generate_target(mesh, scenario, SolverOptions(tol=args.tol))
    mesh_path, vals_path = write_target(target, args.out)
    print(f"wrote {mesh_path} and {vals_path}")
    print(f"integral of measurement: {fem.integrate(mesh, target.values):.3e}")
    return EXIT_OK


def _load_run_config(args):
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        cfg = parse_config(format_config(PRESETS[args.preset].config_values()))
    elif args.config:
        cfg = read_config(args.config)
    else:
        raise UsageError("optimize needs a config file or --preset")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.iters is not None:
        overrides["iters"] = str(args.iters)
    if args.no_guard:
        overrides["guard"] = "off"
    if overrides:
        values = dict(cfg.values, **overrides)
        cfg = parse_config(format_config(values), cfg.base)
    return cfg


class SnapshotWriter:
    def __init__(self, out: Path, every: int):
        self.dir = out / "snapshots"
        self.every = every
        if every:
            self.dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, record: IterationRecord, state: IterationState) -> None:
        if not self.every or state.n % self.every:
            return
        stem = self.dir / f"iter_{state.n:05d}"
        write_mesh(state.mesh, stem.with_suffix(".mesh"))
        s = state.sample
        write_vtk(
            state.mesh,
            stem.with_suffix(".vtk"),
            {"y": s.y, "p": s.p, "mu": state.lame.mu, "V": s.V},
            title=f"iteration {state.n}",
        )


def cmd_optimize(args) -> int:
    if args.list_presets:
        for name in sorted(PRESETS):
            print(f"{name:24s} {PRESETS[name].description}")
        return EXIT_OK
    cfg = _load_run_config(args)
    if args.print_config:
        print(format_config(cfg.values), end="")
        return EXIT_OK
    run = build_run_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg.values), encoding="utf-8")
    snapshots = SnapshotWriter(out, cfg.number("snapshot.every", int))
    records: list[IterationRecord] = []

    def observer(record, state):
        records.append(record)
        snapshots(record, state)

    started = time.perf_counter()
    status, message, result = "aborted", "", None
    try:
        result = run_optimization(run, observer)
        status, message = result.status, result.message
    except (SolverError, MeshError) as exc:
        message = str(exc)
        logger.error("run aborted: %s", exc)
    finally:
        write_history_csv(records, out / "history.csv")

    summary = {
        "status": status,
        "message": message,
        "iterations": len(records),
        "seconds": round(time.perf_counter() - started, 3),
    }
    if result is not None:
        final = result.mesh
        write_mesh(final, out / "final.mesh")
        write_vtk(final, out / "final.vtk", title="final mesh")
        q = triangle_quality(final)
        summary.update(
            {
                "estimate.m": run.estimate_m,
                "j_hat_0": result.initial_estimate[0] if result.initial_estimate else None,
                "v_hat_0": result.initial_estimate[1] if result.initial_estimate else None,
                "j_hat": result.final_estimate[0] if result.final_estimate else None,
                "v_hat": result.final_estimate[1] if result.final_estimate else None,
                "max_aspect_ratio": q.max_ratio,
                "inverted": q.inverted,
            }
        )
    write_summary(out / "summary.txt", summary)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK if status in ("completed", "converged") else EXIT_ABORT


def cmd_quality_report(args) -> int:
    mesh = read_mesh(args.mesh, strict=False)
    q = triangle_quality(mesh)
    print(f"triangles: {mesh.n_triangles}")
    print(f"aspect ratio min: {q.min_ratio:.6f}")
    print(f"aspect ratio mean: {q.mean_ratio:.6f}")
    print(f"aspect ratio max: {q.max_ratio:.6f}")
    print(f"inverted: {q.inverted}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("triangle,region,aspect_ratio\n")
            for t, (lab, r) in enumerate(zip(mesh.labels, q.aspect_ratio), 1):
                fh.write(f"{t},{int(lab)},{'' if not np.isfinite(r) else repr(float(r))}\n")
    return EXIT_ABORT if q.inverted else EXIT_OK


# parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochshape", description="Stochastic shape optimization of material interfaces.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-gen", help="generate a unit-square mesh with elliptic inclusions")
    p.add_argument("--resolution", type=int, required=True, help="grid cells per side")
    p.add_argument("--circle", action="append", metavar="CX,CY,R")
    p.add_argument("--ellipse", action="append", metavar="CX,CY,A,B[,ANGLE]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mesh_gen)

    p = sub.add_parser("generate-target", help="solve the state equation on a target mesh")
    p.add_argument("--mesh", required=True)
    s = MEASUREMENT_SCENARIO
    p.add_argument("--kappa0", type=float, default=s.kappa[0])
    p.add_argument("--kappa-int", type=float, default=s.kappa[1])
    p.add_argument("--g", type=float, default=s.g)
    p.add_argument("--f", type=float, default=s.f)
    p.add_argument("--tol", type=float, default=fem.DEFAULT_TOL)
    p.add_argument("--out", required=True, help="output prefix (writes PREFIX.mesh and PREFIX.values)")
    p.set_defaults(func=cmd_generate_target)

    p = sub.add_parser("optimize", help="run the stochastic shape gradient method")
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--preset", help="use a built-in experiment instead of a config file")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--no-guard", action="store_true", help="apply steps even if they invert triangles")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("quality-report", help="aspect-ratio summary of a mesh")
    p.add_argument("mesh")
    p.add_argument("--csv", help="also write per-triangle ratios")
    p.set_defaults(func=cmd_quality_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except (MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command != "optimize" else EXIT_ABORT
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
