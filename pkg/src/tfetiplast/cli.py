"""Command line front-end: ``solve``, ``mesh gen`` and ``info``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MESH_PRESETS, RunConfig, parse_config
from .driver import ElastoplasticProblem
from .errors import (
    ConfigError,
    DegenerateBox,
    DegenerateElement,
    InvalidGeometry,
    InvariantViolation,
    NoConvergence,
    ParseError,
    TfetiPlastError,
    TooManySubdomains,
)
from .mesh import generate_box_mesh, generate_plate_with_hole, read_mesh, write_mesh
from .vtkio import write_fields

log = logging.getLogger("tfetiplast")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER = 0, 1, 2, 3
MESH_ERRORS = (ParseError, InvariantViolation, InvalidGeometry, DegenerateBox, DegenerateElement, TooManySubdomains)
CSV_COLUMNS = ("step", "newton_iter", "stopping_criterion", "pcgp_iters", "plastic_elements", "seconds")


def exit_code_for(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, MESH_ERRORS):
        return EXIT_MESH
    return EXIT_SOLVER


class ConvergenceLog:
    """Convergence CSV written row by row, so partial output survives a failure."""

    def __init__(self, path, timings=True):
        self.timings = timings
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)

    def write(self, rows):
        for r in rows:
            seconds = f"{r.seconds:.6f}" if self.timings else "0"
            self._w.writerow(
                [r.step, r.newton_iter, repr(float(r.stopping_criterion)), r.pcgp_iters, r.plastic_elements, seconds]
            )
        self._fh.flush()

    def close(self):
        self._fh.close()


def run(config: RunConfig) -> int:
    """Execute one configured simulation and write its artifacts; returns the exit status."""
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        log.error("output directory %s is not writable: %s", out, exc)
        return EXIT_CONFIG

    summary = {"status": "failed", "steps": []}
    csv_log = None
    try:
        mesh = config.build_mesh()
        program = config.build_program()
        problem = ElastoplasticProblem(mesh, config.params, config.solver)
        csv_log = ConvergenceLog(out / "convergence.csv", config.timings)
        n_steps = program.n_steps

        def on_step(record, u, state):
            csv_log.write(record.newton)
            summary["steps"].append(
                {
                    "step": record.step,
                    "time": record.time,
                    "newton_iterations": record.newton_iterations,
                    "pcgp_iterations": record.pcgp_iterations,
                    "plastic_elements": record.plastic_elements,
                }
            )
            if config.fields == "all" or (config.fields == "final" and record.step == n_steps):
                u_nodes = problem.to_global(u).reshape(-1, 3)
                write_fields(mesh, u_nodes, state, out / f"fields_step{record.step:03d}.vtk")
            log.info(
                "step %d/%d t=%.6g: %d Newton, %d PCGP, %d plastic",
                record.step, n_steps, record.time, record.newton_iterations,
                record.pcgp_iterations, record.plastic_elements,
            )

        report, u, state = problem.run(program, on_step=on_step)
        summary.update(
            status="converged",
            total_newton=report.total_newton,
            total_pcgp=report.total_pcgp,
            final_plastic_elements=int(state.plastic.sum()),
            max_displacement=float(np.linalg.norm(problem.to_global(u).reshape(-1, 3), axis=1).max()),
        )
        code = EXIT_OK
    except NoConvergence as exc:
        if csv_log is not None:
            csv_log.write(exc.rows)
        summary["error"] = str(exc)
        log.error("%s", exc)
        code = EXIT_SOLVER
    except TfetiPlastError as exc:
        summary["error"] = str(exc)
        log.error("%s", exc)
        code = exit_code_for(exc)
    finally:
        if csv_log is not None:
            csv_log.close()

    summary.update(
        subdomains=config.solver.subdomains,
        preconditioner=config.solver.preconditioner,
        linear_solver=config.solver.linear_solver,
        eps_newton=config.solver.eps_newton,
        eps_pcgp=config.solver.eps_pcgp,
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return code


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    solver = config.solver
    changes = {}
    if args.subdomains is not None:
        changes["subdomains"] = args.subdomains
    if args.precond is not None:
        changes["preconditioner"] = args.precond
    if args.linear is not None:
        changes["linear_solver"] = args.linear
    if changes:
        try:
            solver = dataclasses.replace(solver, **changes)
        except ValueError as exc:
            raise ConfigError("command line", str(exc)) from None
    load = dict(config.load)
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigError("--steps", "must be >= 1")
        load["steps"] = args.steps
    output_dir = Path(args.out) if args.out is not None else config.output_dir
    return dataclasses.replace(config, solver=solver, load=load, output_dir=output_dir)


def cmd_solve(args):
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        config = _apply_overrides(parse_config(args.config), args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return run(config)


def generate_preset_mesh(preset, refinement=1):
    if preset == "plate_eighth":
        return generate_plate_with_hole(refinement=refinement)
    if preset == "box":
        n = 4 * refinement
        return generate_box_mesh((2.0, 1.0, 1.0), (2 * n, n, n), [("x0", (True, True, True))],
                                 [("x1", (0.0, 0.0, -1.0))]).validate()
    raise ConfigError("preset", f"unknown mesh preset {preset!r}; known: {list(MESH_PRESETS)}")


def cmd_mesh_gen(args):
    try:
        mesh = generate_preset_mesh(args.preset, args.refinement)
        write_mesh(mesh, args.output)
    except TfetiPlastError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    except OSError as exc:
        log.error("cannot write %s: %s", args.output, exc)
        return EXIT_MESH
    print(f"wrote {args.output}: {mesh.n_nodes} nodes, {mesh.n_tets} tets")
    return EXIT_OK


def cmd_info(args):
    try:
        mesh = read_mesh(args.mesh)
    except TfetiPlastError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    except OSError as exc:
        log.error("cannot read %s: %s", args.mesh, exc)
        return EXIT_MESH
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    print(f"nodes            {mesh.n_nodes}")
    print(f"tets             {mesh.n_tets}")
    print(f"volume           {mesh.volume():.12g}")
    print(f"bounding box     {lo.tolist()} .. {hi.tolist()}")
    print(f"dirichlet dofs   {int(mesh.dirichlet.sum())} (x {int(mesh.dirichlet[:, 0].sum())}, "
          f"y {int(mesh.dirichlet[:, 1].sum())}, z {int(mesh.dirichlet[:, 2].sum())})")
    print(f"traction faces   {len(mesh.neumann_faces)}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="tfetiplast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a configured simulation")
    p.add_argument("config")
    p.add_argument("--subdomains", type=int)
    p.add_argument("--precond", choices=("lumped", "dirichlet", "none"))
    p.add_argument("--linear", choices=("tfeti", "direct"))
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="seed numpy's global RNG (randomized tests only)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mesh", help="mesh utilities")
    msub = p.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="write a preset mesh")
    g.add_argument("preset", choices=MESH_PRESETS)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--refinement", type=int, default=1)
    g.set_defaults(func=cmd_mesh_gen)

    p = sub.add_parser("info", help="print mesh statistics")
    p.add_argument("mesh")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)
