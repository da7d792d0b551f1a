"""Benchmark configurations and run orchestration.

Each preset describes one complete control benchmark as flat scalars and
short encoded strings, so a configuration round-trips through a plain
key-value file.  ``build_problem`` turns a configuration into assembled
problem data; ``run`` drives the optimizer (optionally under a homotopy)
and writes the iteration table, the final control profile, and field
snapshots.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .forward import ForwardSolveError
from .mesh import (
    BoundaryTag,
    Mesh,
    build_lshape_mesh,
    build_rectangle_mesh,
    nodes_near_segment,
)
from .model import (
    Control,
    ControlSpace,
    DesiredPhase,
    FractureControlProblem,
    FractureForms,
    ModelParams,
    TimeGrid,
)
from .optimize import (
    CSV_COLUMNS,
    HomotopyResult,
    IterationRecord,
    SolveResult,
    newton_cg,
    run_homotopy,
)
from .sensitivity import adjoint_sweep
from .vtk_io import write_vtk

_BOUNDARY_NAMES = {
    "top": BoundaryTag.NEUMANN_TOP,
    "left": BoundaryTag.NEUMANN_LEFT,
}


@dataclass
class ExperimentConfig:
    """Flat description of one benchmark; every field is a scalar or string.

    Encoded fields: ``control_boundaries`` is a comma list of
    ``side:component`` pairs; ``notches`` a semicolon list of
    ``x0,x1,y`` slits; ``desired_segments`` a semicolon list of
    ``x0,y0,x1,y1,halfwidth`` bands with the half-width in units of the
    element diameter (so mesh rescaling keeps bands proportionate);
    ``output_steps`` a comma list of time indices for field snapshots.
    An empty ``desired_segments`` means no crack beyond the initial data
    is wanted; ``desired_keeps_notches`` decides whether the initial
    slits themselves stay part of the target (1) or count as mismatch
    the control can never remove (0).
    """

    experiment: int = 0
    geometry: str = "square"
    nx: int = 64
    ny: int = 64
    x_end: float = 1.0
    y_end: float = 1.0
    n_steps: int = 40
    t_end: float = 1.0
    young: float = 1.0e6
    poisson: float = 0.2
    plane: str = "strain"
    toughness: float = 1.0
    length_scale: float = 0.0884
    residual_stiffness: float = 1.0e-10
    viscosity: float = 1.0e3
    penalty: float = 1.0e5
    control_kind: str = "scalar"
    control_boundaries: str = "top:y"
    control_layout: str = "constant"
    tikhonov_weight: float = 4.75e-10
    nominal_force: float = 1.0e3
    initial_force: float = 1.0
    baseline_offset: float = 0.0
    baseline_slope: float = 0.0
    notches: str = "0.5,1.0,0.5"
    desired_segments: str = "0.3,0.5,0.5,0.5,1"
    desired_keeps_notches: int = 1
    tol_abs: float = 5.0e-11
    tol_rel: float = 0.0
    max_iterations: int = 30
    forward_tol: float = 1.0e-10
    cg_rel_tol: float = 1.0e-2
    adjoint_coupling: str = "transpose"
    homotopy: str = "none"
    homotopy_length_steps: int = 21
    homotopy_tikhonov_steps: int = 8
    homotopy_factor: float = 0.99
    output_steps: str = "40"


def preset(n: int) -> ExperimentConfig:
    """Named benchmark configurations 1..6.

    1. Single-notch plate, scalar pull on the top edge, target band
       continuing the notch to the left.
    2. Same plate, nodal controls on top and left edges, diagonal target.
    3. Wide strip with four notches; the target connects two of the pairs.
    4. Two facing notches with the target bridging the gap.
    5. L-shaped panel, target band slightly above the reentrant corner.
    6. Single-notch plate under a fixed pulling density; the optimizer
       must counteract it to keep the crack from growing.
    """
    if n == 1:
        return ExperimentConfig(experiment=1)
    if n == 2:
        return ExperimentConfig(
            experiment=2,
            nx=128,
            ny=128,
            n_steps=100,
            length_scale=0.0442,
            control_kind="nodal",
            control_boundaries="top:y,left:x",
            tikhonov_weight=6.5e-9,
            nominal_force=2.2e3,
            initial_force=10.0,
            desired_segments="0.5,0.5,0.1,0.78,3",
            tol_abs=2.0e-10,
            output_steps="100",
        )
    if n == 3:
        return ExperimentConfig(
            experiment=3,
            geometry="strip",
            nx=352,
            ny=64,
            x_end=2.2,
            y_end=0.4,
            n_steps=2000,
            length_scale=0.035,
            control_kind="nodal",
            tikhonov_weight=2.1e-10,
            nominal_force=6.53e3,
            notches="0.3,0.5,0.2;0.7,0.9,0.2;1.3,1.5,0.2;1.7,1.9,0.2",
            desired_segments="0.5,0.2,0.7,0.2,4;1.5,0.2,1.7,0.2,4",
            tol_abs=2.0e-9,
            output_steps="1400,1800,2000",
        )
    if n == 4:
        return ExperimentConfig(
            experiment=4,
            nx=128,
            ny=128,
            n_steps=250,
            length_scale=0.0221,
            control_kind="nodal",
            tikhonov_weight=2.0e-10,
            nominal_force=1.85e3,
            notches="0.0,0.375,0.5;0.625,1.0,0.5",
            desired_segments="0.375,0.5,0.625,0.5,2",
            tol_abs=2.0e-10,
            output_steps="250",
        )
    if n == 5:
        return ExperimentConfig(
            experiment=5,
            geometry="lshape",
            nx=80,
            ny=80,
            n_steps=300,
            length_scale=0.0354,
            control_kind="nodal",
            tikhonov_weight=2.625e-9,
            nominal_force=1.6e3,
            notches="",
            desired_segments="0.5,0.53,1.0,0.53,4",
            tol_abs=2.0e-10,
            output_steps="300",
        )
    if n == 6:
        return ExperimentConfig(
            experiment=6,
            nx=64,
            ny=64,
            n_steps=100,
            length_scale=0.0442,
            control_kind="nodal",
            tikhonov_weight=1.0e-9,
            nominal_force=-8.0e2,
            baseline_offset=850.0,
            baseline_slope=1800.0,
            desired_segments="",
            tol_abs=2.0e-11,
            output_steps="100",
        )
    raise ValueError(f"preset index must be 1..6, got {n}")


# ----------------------------------------------------------------------
# config -> assembled problem


def parse_boundaries(spec: str) -> list[tuple[BoundaryTag, str]]:
    out = []
    for item in spec.split(","):
        side, _, component = item.strip().partition(":")
        if side not in _BOUNDARY_NAMES or component not in ("x", "y"):
            raise ValueError(f"bad control boundary {item!r}")
        out.append((_BOUNDARY_NAMES[side], component))
    return out


def _parse_segments(spec: str, n_fields: int) -> list[tuple[float, ...]]:
    out = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        values = tuple(float(v) for v in chunk.split(","))
        if len(values) != n_fields:
            raise ValueError(f"segment {chunk!r} needs {n_fields} numbers")
        out.append(values)
    return out


def scale_mesh(config: ExperimentConfig, factor: float) -> ExperimentConfig:
    """Rescale the element counts; band half-widths follow h automatically."""
    if factor == 1.0:
        return config
    return dataclasses.replace(
        config,
        nx=max(1, round(config.nx * factor)),
        ny=max(1, round(config.ny * factor)),
    )


def build_mesh(config: ExperimentConfig) -> Mesh:
    boundaries = parse_boundaries(config.control_boundaries)
    tags = {t for t, _ in boundaries}
    if config.geometry == "lshape":
        if config.nx != config.ny:
            raise ValueError("the panel geometry uses one subdivision count")
        return build_lshape_mesh(config.nx)
    if config.geometry not in ("square", "strip"):
        raise ValueError(f"unknown geometry {config.geometry!r}")
    side_tags = {}
    if BoundaryTag.NEUMANN_LEFT in tags:
        side_tags["left"] = BoundaryTag.NEUMANN_LEFT
    return build_rectangle_mesh(
        config.nx, config.ny, x1=config.x_end, y1=config.y_end, side_tags=side_tags
    )


def desired_phase_values(config: ExperimentConfig, mesh: Mesh) -> np.ndarray:
    """Nodal target: intact everywhere except inside the band segments.

    With ``desired_keeps_notches`` the initial slits are carried into the
    target as well; a crack that merely persists then costs nothing, and
    only growth beyond it is penalized.
    """
    h = mesh.cell_diameter()
    values = np.ones(mesh.n_vertices)
    for x0, y0, x1, y1, widths in _parse_segments(config.desired_segments, 5):
        nodes = nodes_near_segment(
            mesh, (x0, y0), (x1, y1), widths * h, closed_ends=False
        )
        values[nodes] = 0.0
    if config.desired_keeps_notches:
        values = np.minimum(values, initial_phase_values(config, mesh))
    return values


def initial_phase_values(config: ExperimentConfig, mesh: Mesh) -> np.ndarray:
    """Nodal slits: zero on the notch line and its two neighbor rows.

    Zeroing one row of nodes leaves the adjacent cell rows partially
    stiff at the quadrature points, which blunts the tip so much that
    realistic loads never propagate the crack.  Zeroing the neighbor rows
    as well kills every cell the line touches, giving a traction-free
    slit of one cell height per side while keeping the crack purely a
    nodal phase datum.
    """
    values = np.ones(mesh.n_vertices)
    rows = np.unique(mesh.vertices[:, 1])
    spacing = float(np.diff(rows).min()) if rows.size > 1 else 0.0
    for x0, x1, y in _parse_segments(config.notches, 3):
        for dy in (-spacing, 0.0, spacing):
            nodes = nodes_near_segment(
                mesh, (x0, y + dy), (x1, y + dy), 0.0, closed_ends=True
            )
            values[nodes] = 0.0
    return values


def build_problem(config: ExperimentConfig) -> FractureControlProblem:
    mesh = build_mesh(config)
    params = ModelParams(
        length_scale=config.length_scale,
        young=config.young,
        poisson=config.poisson,
        toughness=config.toughness,
        residual_stiffness=config.residual_stiffness,
        viscosity=config.viscosity,
        penalty=config.penalty,
        plane=config.plane,
    )
    forms = FractureForms(mesh, params)
    space = ControlSpace(
        mesh,
        forms.dofmap,
        parse_boundaries(config.control_boundaries),
        kind=config.control_kind,
    )
    baseline = None
    if config.baseline_offset != 0.0 or config.baseline_slope != 0.0:
        baseline = config.baseline_offset + config.baseline_slope * space.arclength
    return FractureControlProblem(
        forms=forms,
        control_space=space,
        grid=TimeGrid.uniform(config.t_end, config.n_steps),
        desired=DesiredPhase(desired_phase_values(config, mesh)),
        tikhonov_weight=config.tikhonov_weight,
        nominal_force=config.nominal_force,
        initial_phase=initial_phase_values(config, mesh),
        baseline_force=baseline,
    )


def initial_control(config: ExperimentConfig, problem: FractureControlProblem) -> Control:
    control = problem.initial_control(config.initial_force)
    if config.control_layout == "per_step":
        control = Control(np.tile(control.values, (config.n_steps, 1)))
    elif config.control_layout != "constant":
        raise ValueError(f"unknown control layout {config.control_layout!r}")
    return control


# ----------------------------------------------------------------------
# homotopy sequences


def _scale_first_coordinates(config: ExperimentConfig, factor: float) -> str:
    segments = _parse_segments(config.desired_segments, 5)
    if not segments:
        raise ValueError("the length schedule needs at least one target band")
    scaled = []
    for x0, y0, x1, y1, widths in segments:
        scaled.append(f"{x0 * factor!r},{y0!r},{x1!r},{y1!r},{widths!r}")
    return ";".join(scaled)


def homotopy_problems(config: ExperimentConfig, base: FractureControlProblem):
    """Yield per-step problems for the configured schedule.

    The length schedule stretches each target band by moving its start
    coordinate toward the far boundary (factor^k); the regularization
    schedule shrinks the Tikhonov weight by the same factor.  Step 0 is
    always the unmodified problem.
    """
    kind = config.homotopy
    if kind == "length":
        steps = config.homotopy_length_steps
    elif kind == "tikhonov":
        steps = config.homotopy_tikhonov_steps
    else:
        raise ValueError(f"no homotopy schedule named {kind!r}")
    mesh = base.forms.mesh
    for k in range(steps + 1):
        factor = config.homotopy_factor**k
        if kind == "length":
            stretched = dataclasses.replace(
                config, desired_segments=_scale_first_coordinates(config, factor)
            )
            yield dataclasses.replace(
                base, desired=DesiredPhase(desired_phase_values(stretched, mesh))
            )
        else:
            yield dataclasses.replace(
                base, tikhonov_weight=config.tikhonov_weight * factor
            )


# ----------------------------------------------------------------------
# run orchestration and artifact output

EXIT_CONVERGED = 0
EXIT_FORWARD_FAILURE = 2
EXIT_MAX_ITERATIONS = 3
EXIT_LINESEARCH_FAILURE = 4

_STATUS_EXIT = {
    "converged": EXIT_CONVERGED,
    "max_iterations": EXIT_MAX_ITERATIONS,
    "linesearch_failure": EXIT_LINESEARCH_FAILURE,
}


@dataclass
class RunReport:
    """Everything a driver needs to report one run."""

    config: ExperimentConfig
    status: str
    exit_code: int
    records: list[IterationRecord]
    result: SolveResult | None
    homotopy: HomotopyResult | None = None


def write_iteration_table(path: str, records) -> None:
    with open(path, "w") as fh:
        fh.write(", ".join(CSV_COLUMNS) + "\n")
        for record in records:
            step, iteration, cg = record.as_row()[:3]
            rest = ", ".join(f"{v:.6e}" for v in record.as_row()[3:])
            fh.write(f"{step}, {iteration}, {cg}, {rest}\n")


def write_control_profile(path: str, problem: FractureControlProblem, control: Control) -> None:
    """Arclength coordinate versus applied force density, one node per row."""
    space = problem.control_space
    values = control.values if not control.per_step else control.values[-1]
    if space.kind == "scalar":
        profile = np.full(space.nodes.size, float(values[0]))
    else:
        profile = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        fh.write("arclength, q\n")
        for s, q in zip(space.arclength, profile):
            fh.write(f"{s:.10g}, {q:.10e}\n")


def _snapshot_steps(config: ExperimentConfig, n_steps: int) -> list[int]:
    out = []
    for chunk in config.output_steps.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        out.append(min(int(chunk), n_steps))
    return sorted(set(out))


def write_snapshots(
    out_dir: str,
    problem: FractureControlProblem,
    result: SolveResult,
    steps: list[int],
) -> list[str]:
    """Write phase, displacement, and adjoint displacement fields as VTK."""
    forms = problem.forms
    adjoints = adjoint_sweep(problem, result.trajectory)
    dm = forms.dofmap
    paths = []
    for m in steps:
        state = result.trajectory.states[m]
        adj = adjoints[m]
        path = os.path.join(out_dir, f"state_m{m:04d}.vtk")
        write_vtk(
            path,
            forms.mesh,
            point_scalars={"phase": state[dm.phi()]},
            point_vectors={
                "displacement": np.column_stack([state[dm.ux()], state[dm.uy()]]),
                "adjoint_displacement": np.column_stack([adj[dm.ux()], adj[dm.uy()]]),
            },
        )
        paths.append(path)
    return paths


def run(
    config: ExperimentConfig,
    out_dir: str | None = None,
    mesh_scale: float = 1.0,
    n_steps: int | None = None,
    tol_abs: float | None = None,
    homotopy: str | None = None,
) -> RunReport:
    """Execute one benchmark with optional overrides and write artifacts.

    Overrides rescale the mesh (band widths follow the element diameter),
    replace the slab count or stopping tolerance, and select a homotopy
    schedule ("length", "tikhonov", or "none").  Exit codes distinguish
    convergence, forward solver failure, iteration budget, and a stalled
    line search.
    """
    config = scale_mesh(config, mesh_scale)
    if n_steps is not None:
        config = dataclasses.replace(config, n_steps=n_steps)
    if tol_abs is not None:
        config = dataclasses.replace(config, tol_abs=tol_abs)
    if homotopy is not None:
        config = dataclasses.replace(config, homotopy=homotopy)

    problem = build_problem(config)
    control = initial_control(config, problem)
    newton_kwargs = dict(
        tol_abs=config.tol_abs,
        tol_rel=config.tol_rel,
        max_iter=config.max_iterations,
        cg_rel_tol=config.cg_rel_tol,
        adjoint_coupling=config.adjoint_coupling,
        forward_tol=config.forward_tol,
    )

    homotopy_result = None
    try:
        if config.homotopy in ("length", "tikhonov"):
            homotopy_result = run_homotopy(
                homotopy_problems(config, problem), control, **newton_kwargs
            )
            result = homotopy_result.final
            records = homotopy_result.records
            status = result.status
            if (
                homotopy_result.failed_step is not None
                and homotopy_result.completed == homotopy_result.failed_step
            ):
                # the failing step never produced a solve: state equation broke
                status = "forward_failure"
        else:
            result = newton_cg(problem, control, **newton_kwargs)
            records = result.records
            status = result.status
    except ForwardSolveError:
        return RunReport(config, "forward_failure", EXIT_FORWARD_FAILURE, [], None)

    exit_code = _STATUS_EXIT.get(status, EXIT_FORWARD_FAILURE)
    report = RunReport(config, status, exit_code, records, result, homotopy_result)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_iteration_table(os.path.join(out_dir, "iters.csv"), records)
        write_control_profile(
            os.path.join(out_dir, "control.csv"), problem, result.control
        )
        write_snapshots(
            out_dir, problem, result, _snapshot_steps(config, config.n_steps)
        )
    return report
