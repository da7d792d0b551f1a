"""Quasi-static forward solver: one damped semismooth Newton solve per slab.

Each time slab couples to its predecessor through the one-sided
irreversibility penalty and the viscous jump term.  The converged step
matrices are refactorized once at the final iterate and kept, so the
adjoint, tangent, and second-order sweeps can reuse them as black-box
(transposed) solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .fem import Factorization, apply_dirichlet
from .model import Control, FractureControlProblem, FractureForms, degradation


class ForwardSolveError(RuntimeError):
    """A slab's Newton iteration stalled or exhausted its budget."""

    def __init__(self, step: int, residual: float, message: str):
        super().__init__(f"forward solve failed at slab {step}: {message} "
                         f"(residual {residual:.3e})")
        self.step = step
        self.residual = residual


@dataclass
class NewtonReport:
    """Convergence record of one slab solve."""

    step: int
    iterations: int
    residual: float
    residual_history: list[float] = field(default_factory=list)
    damping_events: int = 0
    rescue_sweeps: int = 0


@dataclass
class Trajectory:
    """States and reusable step data of one forward solve.

    ``states`` has one row per time point (row 0 holds the initial data).
    ``transfer[m]``, ``masks[m]``, and ``factors[m]`` belong to slab
    ``m`` in 1..n_steps; index 0 is unused and kept None so slab indices
    line up with time points.
    """

    states: np.ndarray
    masks: list
    transfer: list
    factors: list
    reports: list

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def phases(self, forms: FractureForms) -> np.ndarray:
        return self.states[:, forms.dofmap.phi()]


def project_initial(problem: FractureControlProblem) -> np.ndarray:
    """Initial state vector from the prescribed nodal phase data.

    The data is given nodally, so its mass-orthogonal projection onto the
    ansatz space is the nodal interpolant itself; displacements start at
    zero.  Kept as a function to mark the single entry point for initial
    data.
    """
    return problem.initial_state()


def _step_residual(
    forms: FractureForms,
    state: np.ndarray,
    phase_old: np.ndarray,
    load: np.ndarray,
    dt: float,
    dirichlet: np.ndarray,
) -> np.ndarray:
    res = dt * forms.residual(state, load)
    res[forms.dofmap.phi()] += forms.penalty_residual(forms.phase_of(state), phase_old)
    res[dirichlet] = 0.0
    return res


def _assemble_step(
    forms: FractureForms,
    state: np.ndarray,
    phase_old: np.ndarray,
    dt: float,
    dirichlet: np.ndarray,
) -> tuple[np.ndarray, sparse.csr_matrix, sparse.csr_matrix]:
    mask = forms.healing_mask(forms.phase_of(state), phase_old)
    transfer = forms.transfer_matrix(mask)
    matrix = apply_dirichlet(
        forms.embed_phase_matrix(transfer) + dt * forms.jacobian(state), dirichlet
    )
    return mask, transfer, matrix


def _step_energy(
    forms: FractureForms,
    state: np.ndarray,
    phase_old: np.ndarray,
    load: np.ndarray,
    dt: float,
) -> float:
    """Incremental slab energy whose state gradient is :func:`_step_residual`.

    Degraded elastic plus surface energy minus the load work, scaled by the
    slab length, plus the one-sided penalty and viscous halves of the jump
    terms.  The surface part drops the constant so the value is only
    meaningful in differences, which is all the line search compares.
    """
    dm, geom = forms.dofmap, forms.geom
    kappa = forms.params.residual_stiffness
    u_cell = state[dm.cell_udofs]
    phase = forms.phase_of(state)
    phase_q = geom.scalar_at_qp(phase)

    pair_u = np.einsum("cqab,cb->cqa", forms.energy_pairing, u_cell)
    energy_q = np.einsum("cqa,ca->cq", pair_u, u_cell)
    elastic = 0.5 * float((degradation(phase_q, kappa) * energy_q).sum())
    surface = 0.5 * float(phase @ (forms.phi_linear @ phase)) - float(
        forms.phi_source @ phase
    )

    jump = phase - phase_old
    jump_q = geom.scalar_at_qp(jump)
    penalty = 0.5 * forms.params.penalty * float(
        (geom.weight * np.maximum(jump_q, 0.0) ** 2).sum()
    )
    viscous = 0.5 * forms.params.viscosity * float(jump @ (forms.mass_phi @ jump))
    return dt * (elastic + surface - float(load @ state)) + penalty + viscous


def _staggered_sweep(
    forms: FractureForms,
    state: np.ndarray,
    phase_old: np.ndarray,
    load: np.ndarray,
    dt: float,
    dirichlet: np.ndarray,
    mask_rounds: int = 30,
) -> np.ndarray:
    """One alternating block pass: exact elastic solve, then exact phase solve.

    The slab residual is linear in each field separately (the degraded
    elastic operator does not depend on u, the phase-row coefficient not on
    phi), so both block solves minimize the slab energy exactly in their
    field; the pass can only lower the energy.  The penalty mask is
    iterated to a fixed point inside the convex phase solve.
    """
    dm = forms.dofmap
    nu = 2 * dm.n_nodes
    clamp = dirichlet[:nu]
    out = state.copy()

    kuu = forms.jacobian(out)[:nu, :nu].tocsr()
    rhs_u = load[:nu].copy()
    rhs_u[clamp] = 0.0
    out[:nu] = Factorization(apply_dirichlet(kuu, clamp)).solve(rhs_u)

    jphi = forms.jacobian(out)[nu:, nu:].tocsr()
    rhs_phi = dt * (forms.phi_source + load[nu:])
    phase = forms.phase_of(out)
    for _ in range(mask_rounds):
        mask = forms.healing_mask(phase, phase_old)
        transfer = forms.transfer_matrix(mask)
        phase = Factorization((transfer + dt * jphi).tocsr()).solve(
            rhs_phi + transfer @ phase_old
        )
        if not np.any(forms.healing_mask(phase, phase_old) != mask):
            break
    out[dm.phi()] = phase
    return out


def solve_step(
    forms: FractureForms,
    state_old: np.ndarray,
    load: np.ndarray,
    dt: float,
    step: int,
    tol: float = 1e-10,
    max_iter: int = 100,
    max_damping: int = 12,
    sweep_batch: int = 60,
):
    """Advance one slab with an energy-monotone semismooth Newton iteration.

    Each slab problem is the stationarity system of an incremental energy,
    so globalization works on that energy: the Newton step is accepted
    under an Armijo test (halving the step up to ``max_damping`` times),
    and whenever it fails, or the factored system returns an ascent
    direction (typical while a crack snaps through within the slab), one
    alternating block sweep takes over; the sweep minimizes the energy
    blockwise and always descends.  Iteration stops when the max-norm
    residual reaches ``tol``.  Returns the new state together with the
    final mask, transfer matrix, LU factorization, and a report.
    """
    dirichlet = forms.dofmap.dirichlet_mask
    phase_old = forms.phase_of(state_old).copy()
    state = state_old.copy()
    res = _step_residual(forms, state, phase_old, load, dt, dirichlet)
    res_norm = float(np.abs(res).max())
    energy = _step_energy(forms, state, phase_old, load, dt)
    report = NewtonReport(step, 0, res_norm, [res_norm])

    for _ in range(max_iter):
        if res_norm <= tol:
            break
        _, _, matrix = _assemble_step(forms, state, phase_old, dt, dirichlet)
        factor = Factorization(matrix)
        delta = factor.solve(-res)
        slope = float(res @ delta)

        accepted = False
        if slope < 0.0:
            scale = 1.0
            for _ in range(max_damping + 1):
                trial = state + scale * delta
                trial_energy = _step_energy(forms, trial, phase_old, load, dt)
                trial_res = _step_residual(
                    forms, trial, phase_old, load, dt, dirichlet
                )
                trial_norm = float(np.abs(trial_res).max())
                # Near the solution the energy decrement drowns in float
                # roundoff, so plain residual contraction also accepts.
                armijo = np.isfinite(trial_energy) and (
                    trial_energy <= energy + 1e-4 * scale * slope
                )
                contracting = np.isfinite(trial_norm) and (
                    trial_norm <= 0.5 * res_norm
                )
                if armijo or contracting:
                    accepted = True
                    break
                scale *= 0.5
                report.damping_events += 1
        if not accepted:
            # Block sweeps traverse the unstable stretch: keep sweeping
            # (extrapolating each increment while that helps) as long as
            # the energy gains grow; once they decelerate the iterate is
            # back in a convex basin and Newton takes over again.
            trial, trial_energy = state, energy
            best_gain = 0.0
            for _ in range(sweep_batch):
                sweep = _staggered_sweep(
                    forms, trial, phase_old, load, dt, dirichlet
                )
                best = sweep
                best_energy = _step_energy(forms, sweep, phase_old, load, dt)
                increment = sweep - trial
                for omega in (2.0, 4.0, 8.0, 16.0):
                    cand = trial + omega * increment
                    cand_energy = _step_energy(forms, cand, phase_old, load, dt)
                    if np.isfinite(cand_energy) and cand_energy < best_energy:
                        best, best_energy = cand, cand_energy
                report.rescue_sweeps += 1
                if not best_energy < trial_energy:
                    break
                gain = trial_energy - best_energy
                trial, trial_energy = best, best_energy
                if gain < 0.25 * best_gain:
                    break
                best_gain = max(best_gain, gain)
            trial_res = _step_residual(forms, trial, phase_old, load, dt, dirichlet)
            trial_norm = float(np.abs(trial_res).max())
            if not (trial_energy < energy or trial_norm < res_norm):
                raise ForwardSolveError(
                    step, res_norm, "no descent step found on the slab energy"
                )
        state, energy = trial, trial_energy
        res, res_norm = trial_res, trial_norm
        report.iterations += 1
        report.residual_history.append(res_norm)
    else:
        raise ForwardSolveError(step, res_norm, "Newton budget exhausted")

    report.residual = res_norm
    mask, transfer, matrix = _assemble_step(forms, state, phase_old, dt, dirichlet)
    return state, mask, transfer, Factorization(matrix), report


def solve_forward(
    problem: FractureControlProblem,
    control: Control,
    tol: float = 1e-10,
    max_iter: int = 50,
    max_damping: int = 12,
    healing_slack: float = 1e-3,
) -> Trajectory:
    """March the coupled system across all slabs for a fixed control.

    Raises :class:`ForwardSolveError` on the first slab whose Newton
    iteration fails.  Warns if the penalty left a phase-field increase
    beyond ``healing_slack`` anywhere (the constraint is enforced only
    approximately).
    """
    forms = problem.forms
    grid = problem.grid
    n_steps = grid.n_steps
    states = np.empty((n_steps + 1, forms.n_dofs))
    states[0] = project_initial(problem)
    masks: list = [None]
    transfer: list = [None]
    factors: list = [None]
    reports: list = [None]

    for m in range(1, n_steps + 1):
        state, mask, trans, factor, report = solve_step(
            forms,
            states[m - 1],
            problem.load(control, m),
            float(grid.dt[m - 1]),
            m,
            tol=tol,
            max_iter=max_iter,
            max_damping=max_damping,
        )
        states[m] = state
        masks.append(mask)
        transfer.append(trans)
        factors.append(factor)
        reports.append(report)

    phases = states[:, forms.dofmap.phi()]
    worst = float(np.diff(phases, axis=0).max(initial=0.0))
    if worst > healing_slack:
        warnings.warn(
            f"phase field increased by up to {worst:.2e} between slabs; "
            "consider a larger penalty",
            RuntimeWarning,
            stacklevel=2,
        )
    return Trajectory(states, masks, transfer, factors, reports)
