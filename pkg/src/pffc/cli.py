"""Command line entry points.

``pffc run`` executes a benchmark and writes its artifacts, ``pffc
check`` exercises the finite-difference oracles on a desk-size instance,
and ``pffc mesh`` exports a preset's mesh.  Exit codes of ``run``:
0 converged, 2 forward solver failure, 3 iteration budget exhausted,
4 line search stalled.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import experiments
from .config_io import read_config
from .forward import solve_forward
from .model import Control, DesiredPhase
from .optimize import hessian_vector_dual, newton_cg, reduced_gradient
from .sensitivity import adjoint_sweep
from .vtk_io import write_vtk


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pffc",
        description="Optimal boundary-force control of phase-field fracture.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one benchmark and write artifacts")
    run.add_argument("--experiment", type=int, choices=range(1, 7), help="preset index")
    run.add_argument("--config", help="configuration file (overrides the preset)")
    run.add_argument("--mesh-scale", type=float, default=1.0)
    run.add_argument("--time-steps", type=int, default=None)
    run.add_argument("--tol-abs", type=float, default=None)
    run.add_argument(
        "--homotopy",
        choices=["a", "b", "none"],
        default=None,
        help="a: stretch the target band, b: shrink the Tikhonov weight",
    )
    run.add_argument("--out", default=None, help="output directory")

    check = sub.add_parser("check", help="run the derivative oracle suite")
    check.add_argument("--seed", type=int, default=2024)

    mesh = sub.add_parser("mesh", help="export a preset mesh as VTK")
    mesh.add_argument("--experiment", type=int, choices=range(1, 7), required=True)
    mesh.add_argument("--out", required=True)
    return parser


_HOMOTOPY_FLAG = {"a": "length", "b": "tikhonov", "none": "none"}


def _cmd_run(args) -> int:
    if args.config:
        config = read_config(args.config)
    elif args.experiment:
        config = experiments.preset(args.experiment)
    else:
        print("error: provide --experiment or --config", file=sys.stderr)
        return 1
    report = experiments.run(
        config,
        out_dir=args.out,
        mesh_scale=args.mesh_scale,
        n_steps=args.time_steps,
        tol_abs=args.tol_abs,
        homotopy=None if args.homotopy is None else _HOMOTOPY_FLAG[args.homotopy],
    )
    last = report.records[-1] if report.records else None
    print(f"status: {report.status}")
    if last is not None:
        print(
            f"iterations: {last.iteration}  residual: {last.abs_residual:.3e}  "
            f"cost: {last.cost:.6e}  force: {last.force:.2f}"
        )
    return report.exit_code


def _cmd_check(args) -> int:
    """Gradient, Hessian, and stationarity oracles on a coarse instance."""
    rng = np.random.default_rng(args.seed)
    config = experiments.preset(1)
    config = experiments.scale_mesh(config, 0.25)
    config = dataclasses.replace(config, n_steps=5)
    problem = experiments.build_problem(config)
    forms = problem.forms

    failures = 0

    def report(name: str, error: float, bound: float) -> None:
        nonlocal failures
        ok = error <= bound
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {error:.3e} (tolerance {bound:.1e})")

    control = Control(problem.control_space.uniform(500.0))
    trajectory = solve_forward(problem, control, tol=config.forward_tol)
    adjoints = adjoint_sweep(problem, trajectory)
    grad = reduced_gradient(problem, control, adjoints)

    def objective(values: np.ndarray) -> float:
        c = Control(values)
        traj = solve_forward(problem, c, tol=1e-12)
        return problem.cost(c, traj.phases(forms))[0]

    worst = 0.0
    for _ in range(3):
        direction = rng.standard_normal(control.values.shape)
        predicted = float(grad.raw.ravel() @ direction.ravel())
        best = np.inf
        for tau in (1e-4, 1e-5, 1e-6):
            fd = (
                objective(control.values + tau * direction)
                - objective(control.values - tau * direction)
            ) / (2 * tau)
            best = min(best, abs(fd - predicted) / max(abs(fd), 1e-300))
        worst = max(worst, best)
    report("reduced gradient vs finite differences", worst, 1e-3)

    d1 = rng.standard_normal(control.values.shape)
    d2 = rng.standard_normal(control.values.shape)
    h1 = hessian_vector_dual(problem, control, trajectory, adjoints, d1)
    h2 = hessian_vector_dual(problem, control, trajectory, adjoints, d2)
    lhs = float(h1.ravel() @ d2.ravel())
    rhs = float(h2.ravel() @ d1.ravel())
    report("reduced Hessian symmetry", abs(lhs - rhs) / max(abs(lhs), 1e-300), 1e-6)

    nominal = Control(problem.control_space.uniform(problem.nominal_force))
    traj_nominal = solve_forward(problem, nominal, tol=config.forward_tol)
    stationary = dataclasses.replace(
        problem, desired=DesiredPhase(traj_nominal.phases(forms).copy())
    )
    result = newton_cg(
        stationary, nominal, tol_abs=1e-30, max_iter=0, initial_trajectory=traj_nominal
    )
    scale = abs(problem.tikhonov_weight * problem.nominal_force)
    report("constructed stationary point", result.gradient_norm, 1e-12 * max(scale, 1.0))

    print("all checks passed" if failures == 0 else f"{failures} check(s) failed")
    return 0 if failures == 0 else 1


def _cmd_mesh(args) -> int:
    config = experiments.preset(args.experiment)
    mesh = experiments.build_mesh(config)
    write_vtk(
        args.out,
        mesh,
        point_scalars={
            "initial_phase": experiments.initial_phase_values(config, mesh),
            "desired_phase": experiments.desired_phase_values(config, mesh),
        },
    )
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "check":
        return _cmd_check(args)
    return _cmd_mesh(args)


if __name__ == "__main__":
    sys.exit(main())
