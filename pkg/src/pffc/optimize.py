"""Reduced-space Newton optimizer for the boundary force control.

The state is eliminated through the forward solver, gradients come from
one adjoint sweep, and Hessian-vector products from one tangent plus one
second-order adjoint sweep.  The inner conjugate gradient iteration runs
in the boundary mass inner product, so scalar controls converge in one
step and nodal controls stay mesh-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardSolveError, Trajectory, solve_forward
from .model import Control, FractureControlProblem
from .sensitivity import adjoint_sweep, hessian_sweep, tangent_sweep

CSV_COLUMNS = (
    "Step",
    "Iter",
    "CG",
    "RelResidual",
    "AbsResidual",
    "Cost",
    "Tracking",
    "Tikhonov",
    "Force",
)


@dataclass(frozen=True)
class ReducedGradient:
    """Dual derivative and its boundary-mass Riesz representative."""

    raw: np.ndarray
    gradient: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient.ravel()))


def _layout_dual(problem: FractureControlProblem, control: Control, adjoints: np.ndarray,
                 deviation: np.ndarray) -> np.ndarray:
    """Slab-weighted dual vector alpha*G*dev + B^T z, in the control layout."""
    space = problem.control_space
    dt = problem.grid.dt
    alpha = problem.tikhonov_weight
    n_steps = problem.grid.n_steps
    if control.per_step:
        out = np.empty_like(control.values)
        for m in range(1, n_steps + 1):
            out[m - 1] = dt[m - 1] * (
                alpha * space.apply_inner(deviation[m - 1])
                + space.adjoint_pairing(adjoints[m])
            )
        return out
    out = np.zeros_like(control.values)
    regular = alpha * space.apply_inner(deviation)
    for m in range(1, n_steps + 1):
        out += dt[m - 1] * (regular + space.adjoint_pairing(adjoints[m]))
    return out


def _riesz_solve(problem: FractureControlProblem, control: Control, dual: np.ndarray) -> np.ndarray:
    space = problem.control_space
    if control.per_step:
        out = np.empty_like(dual)
        for m, row in enumerate(dual):
            out[m] = space.solve_riesz(row) / problem.grid.dt[m]
        return out
    return space.solve_riesz(dual)


def _control_inner(problem: FractureControlProblem, control: Control,
                   a: np.ndarray, b: np.ndarray) -> float:
    space = problem.control_space
    if control.per_step:
        dt = problem.grid.dt
        return float(
            sum(dt[m] * space.inner(a[m], b[m]) for m in range(a.shape[0]))
        )
    return space.inner(a, b)


def reduced_gradient(
    problem: FractureControlProblem, control: Control, adjoints: np.ndarray
) -> ReducedGradient:
    """First derivative of the reduced objective at a solved control."""
    deviation = control.values - problem.nominal_force
    raw = _layout_dual(problem, control, adjoints, deviation)
    return ReducedGradient(raw, _riesz_solve(problem, control, raw))


def hessian_vector_dual(
    problem: FractureControlProblem,
    control: Control,
    trajectory: Trajectory,
    adjoints: np.ndarray,
    direction: np.ndarray,
) -> np.ndarray:
    """Dual (unriesz'd) reduced-Hessian action on a control direction."""
    dcontrol = Control(np.asarray(direction, dtype=float).reshape(control.values.shape))
    dstates = tangent_sweep(problem, trajectory, dcontrol)
    dadjoints = hessian_sweep(problem, trajectory, dstates, adjoints)
    return _layout_dual(problem, control, dadjoints, dcontrol.values)


def hessian_vector(
    problem: FractureControlProblem,
    control: Control,
    trajectory: Trajectory,
    adjoints: np.ndarray,
    direction: np.ndarray,
) -> np.ndarray:
    dual = hessian_vector_dual(problem, control, trajectory, adjoints, direction)
    return _riesz_solve(problem, control, dual)


def _truncated_cg(
    problem: FractureControlProblem,
    control: Control,
    trajectory: Trajectory,
    adjoints: np.ndarray,
    grad: ReducedGradient,
    rel_tol: float = 1e-2,
    max_iter: int | None = None,
) -> tuple[np.ndarray, int, bool]:
    """Conjugate gradients on the Newton system in the control inner product.

    Truncates on nonpositive curvature (returning the progress so far, or
    the steepest descent direction if that happens immediately) and on a
    relative residual reduction.  The curvature number is the plain dual
    pairing of the search direction with the unriesz'd Hessian action; the
    returned flag reports whether nonpositive curvature was encountered,
    in which case the quadratic model gives no step length scale.
    """
    x = np.zeros_like(grad.gradient)
    r = -grad.gradient
    p = r.copy()
    rr0 = _control_inner(problem, control, r, r)
    rr = rr0
    budget = r.size if max_iter is None else max_iter
    applications = 0
    indefinite = False
    for k in range(budget):
        if rr == 0.0:
            break
        hdual = hessian_vector_dual(problem, control, trajectory, adjoints, p)
        applications += 1
        curvature = float(p.ravel() @ hdual.ravel())
        if curvature <= 0.0:
            indefinite = True
            if k == 0:
                x = r.copy()
            break
        hp = _riesz_solve(problem, control, hdual)
        alpha = rr / curvature
        x = x + alpha * p
        r = r - alpha * hp
        rr_new = _control_inner(problem, control, r, r)
        if rr_new <= rel_tol**2 * rr0:
            rr = rr_new
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, applications, indefinite


@dataclass(frozen=True)
class IterationRecord:
    """One logged optimizer iteration (one CSV row)."""

    step: int
    iteration: int
    cg_iterations: int
    rel_residual: float
    abs_residual: float
    cost: float
    tracking: float
    tikhonov: float
    force: float

    def as_row(self) -> tuple:
        return (
            self.step,
            self.iteration,
            self.cg_iterations,
            self.rel_residual,
            self.abs_residual,
            self.cost,
            self.tracking,
            self.tikhonov,
            self.force,
        )


@dataclass
class SolveResult:
    """Outcome of one reduced-space Newton solve."""

    control: Control
    trajectory: Trajectory
    records: list[IterationRecord]
    status: str
    iterations: int
    gradient_norm: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def newton_cg(
    problem: FractureControlProblem,
    control0: Control,
    tol_abs: float,
    tol_rel: float = 0.0,
    max_iter: int = 30,
    cg_rel_tol: float = 1e-2,
    armijo_slope: float = 1e-4,
    max_backtracks: int = 12,
    adjoint_coupling: str = "transpose",
    forward_tol: float = 1e-10,
    homotopy_step: int = 0,
    records: list | None = None,
    initial_trajectory: Trajectory | None = None,
) -> SolveResult:
    """Newton-CG on the reduced objective with Armijo backtracking.

    Terminates when the gradient norm drops below ``tol_abs`` (or below
    ``tol_rel`` times its initial value), when the iteration budget runs
    out, or when the line search cannot make progress; the best iterate
    so far is returned in all cases.  A trial control whose forward solve
    fails counts as a rejected step.  ``records`` collects one
    :class:`IterationRecord` per iteration including iteration 0; pass a
    shared list to concatenate homotopy steps.
    """
    if records is None:
        records = []
    first_record = len(records)
    forms = problem.forms

    control = control0
    trajectory = (
        solve_forward(problem, control, tol=forward_tol)
        if initial_trajectory is None
        else initial_trajectory
    )
    cost, tracking, tikhonov = problem.cost(control, trajectory.phases(forms))
    adjoints = adjoint_sweep(problem, trajectory, coupling=adjoint_coupling)
    grad = reduced_gradient(problem, control, adjoints)
    initial_norm = grad.norm

    def log(iteration: int, cg_iters: int) -> None:
        records.append(
            IterationRecord(
                homotopy_step,
                iteration,
                cg_iters,
                grad.norm / initial_norm if initial_norm > 0 else 0.0,
                grad.norm,
                cost,
                tracking,
                tikhonov,
                control.extremum(),
            )
        )

    log(0, 0)
    iteration = 0
    status = "max_iterations"
    while True:
        if grad.norm <= tol_abs or (tol_rel > 0 and grad.norm <= tol_rel * initial_norm):
            status = "converged"
            break
        if iteration >= max_iter:
            status = "max_iterations"
            break
        iteration += 1

        direction, cg_iters, indefinite = _truncated_cg(
            problem, control, trajectory, adjoints, grad, rel_tol=cg_rel_tol
        )
        slope = float(grad.raw.ravel() @ direction.ravel())
        if slope >= 0.0:
            direction = -grad.gradient
            slope = -float(grad.raw.ravel() @ grad.gradient.ravel())
            indefinite = True

        step_size = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            trial = Control(control.values + step_size * direction)
            try:
                trial_traj = solve_forward(problem, trial, tol=forward_tol)
            except ForwardSolveError:
                step_size *= 0.5
                continue
            trial_cost, trial_tracking, trial_tik = problem.cost(
                trial, trial_traj.phases(forms)
            )
            if trial_cost <= cost + armijo_slope * step_size * slope:
                accepted = True
                break
            step_size *= 0.5
        if not accepted:
            status = "linesearch_failure"
            break

        # A fallback direction carries no length scale (the quadratic
        # model broke down), so grow the accepted step geometrically as
        # long as each doubling still lowers the cost.
        while indefinite and accepted and step_size == 1.0:
            wider = Control(control.values + 2.0 * step_size * direction)
            try:
                wider_traj = solve_forward(problem, wider, tol=forward_tol)
            except ForwardSolveError:
                break
            wider_cost, wider_tracking, wider_tik = problem.cost(
                wider, wider_traj.phases(forms)
            )
            if not wider_cost < trial_cost:
                break
            direction = 2.0 * direction
            trial, trial_traj = wider, wider_traj
            trial_cost, trial_tracking, trial_tik = (
                wider_cost,
                wider_tracking,
                wider_tik,
            )

        control, trajectory = trial, trial_traj
        cost, tracking, tikhonov = trial_cost, trial_tracking, trial_tik
        adjoints = adjoint_sweep(problem, trajectory, coupling=adjoint_coupling)
        grad = reduced_gradient(problem, control, adjoints)
        log(iteration, cg_iters)

    return SolveResult(
        control, trajectory, records[first_record:], status, iteration, grad.norm
    )


@dataclass
class HomotopyResult:
    """Prefix of homotopy solves, stopping early on a forward failure."""

    solves: list[SolveResult]
    records: list[IterationRecord]
    failed_step: int | None = None

    @property
    def completed(self) -> int:
        return len(self.solves)

    @property
    def final(self) -> SolveResult:
        return self.solves[-1]


def run_homotopy(problems, control0: Control, **newton_kwargs) -> HomotopyResult:
    """Solve a sequence of related problems, warm-starting each from the last.

    ``problems`` yields the per-step problem instances (same mesh and
    control space throughout).  The best control and trajectory of one
    step seed the next; the trajectory carries over exactly because the
    state equation does not involve the quantities a homotopy varies.
    A step that stops with a stalled line search still contributes its
    best iterate and the chain continues (on nonsmooth coarse problems
    the optimum sits at a kink where no descent step exists); only a
    failed forward solve ends the sequence early, returning the prefix
    with the index of the step that broke the chain.
    """
    records: list[IterationRecord] = []
    solves: list[SolveResult] = []
    control = control0
    trajectory = None
    failed_step = None
    for k, problem in enumerate(problems):
        try:
            result = newton_cg(
                problem,
                control,
                homotopy_step=k,
                records=records,
                initial_trajectory=trajectory,
                **newton_kwargs,
            )
        except ForwardSolveError:
            failed_step = k
            break
        solves.append(result)
        control, trajectory = result.control, result.trajectory
    if not solves:
        raise RuntimeError("homotopy failed before completing a single step")
    return HomotopyResult(solves, records, failed_step)
