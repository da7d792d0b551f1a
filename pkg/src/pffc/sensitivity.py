"""Linearized sweeps along a solved trajectory.

All three sweeps reuse the LU factors stored during the forward solve:
the adjoint and second-order adjoint run backward with transposed solves,
the tangent runs forward.  Constrained displacement rows are zeroed on
every right-hand side, which keeps the sweeps consistent with the
eliminated step matrices.
"""

from __future__ import annotations

import numpy as np

from .fem import Factorization, apply_dirichlet
from .forward import Trajectory
from .model import Control, FractureControlProblem


def _literal_factor(
    problem: FractureControlProblem, trajectory: Trajectory, m: int
) -> Factorization:
    """Step factorization with the successor slab's healing mask.

    Supports the variant in which the backward-in-time operator carries
    the active set of the jump it preconditions (slab m+1) instead of the
    transposed forward operator of slab m.  The last slab has no
    successor and keeps its own mask.
    """
    forms = problem.forms
    if m >= trajectory.n_steps:
        return trajectory.factors[m]
    phases = trajectory.phases(forms)
    mask = forms.healing_mask(phases[m + 1], phases[m])
    transfer = forms.transfer_matrix(mask)
    dt = float(problem.grid.dt[m - 1])
    matrix = apply_dirichlet(
        forms.embed_phase_matrix(transfer) + dt * forms.jacobian(trajectory.states[m]),
        forms.dofmap.dirichlet_mask,
    )
    return Factorization(matrix)


def adjoint_sweep(
    problem: FractureControlProblem,
    trajectory: Trajectory,
    coupling: str = "transpose",
) -> np.ndarray:
    """Backward sweep for the tracking adjoint; returns (n_steps+1, n_dofs).

    With ``coupling="transpose"`` each slab solves against the transpose
    of its stored forward matrix.  ``coupling="literal"`` instead rebuilds
    the operator with the successor slab's healing mask, trading extra
    factorizations for the alternative active-set pairing.
    """
    if coupling not in ("transpose", "literal"):
        raise ValueError("coupling must be 'transpose' or 'literal'")
    forms = problem.forms
    dirichlet = forms.dofmap.dirichlet_mask
    phi_rows = forms.dofmap.phi()
    n_steps = trajectory.n_steps
    phases = trajectory.phases(forms)

    adjoints = np.zeros((n_steps + 1, forms.n_dofs))
    for m in range(n_steps, 0, -1):
        rhs = forms.embed_phase_vector(problem.tracking_derivative(m, phases[m]))
        if m < n_steps:
            rhs[phi_rows] += trajectory.transfer[m + 1] @ adjoints[m + 1][phi_rows]
        rhs[dirichlet] = 0.0
        if coupling == "transpose":
            adjoints[m] = trajectory.factors[m].solve(rhs, transpose=True)
        else:
            adjoints[m] = _literal_factor(problem, trajectory, m).solve(
                rhs, transpose=True
            )
    adjoints[0] = adjoints[1]
    return adjoints


def tangent_sweep(
    problem: FractureControlProblem,
    trajectory: Trajectory,
    dcontrol: Control,
) -> np.ndarray:
    """Forward sweep for the state sensitivity along a control direction."""
    forms = problem.forms
    dirichlet = forms.dofmap.dirichlet_mask
    phi_rows = forms.dofmap.phi()
    n_steps = trajectory.n_steps
    dt = problem.grid.dt

    dstates = np.zeros((n_steps + 1, forms.n_dofs))
    for m in range(1, n_steps + 1):
        rhs = dt[m - 1] * problem.control_space.load(dcontrol.at_step(m))
        rhs[phi_rows] += trajectory.transfer[m] @ dstates[m - 1][phi_rows]
        rhs[dirichlet] = 0.0
        dstates[m] = trajectory.factors[m].solve(rhs)
    return dstates


def hessian_sweep(
    problem: FractureControlProblem,
    trajectory: Trajectory,
    dstates: np.ndarray,
    adjoints: np.ndarray,
) -> np.ndarray:
    """Backward sweep for the second-order adjoint.

    Combines the tracking curvature with the semilinear form's curvature
    contracted against the first-order adjoint, then chains through the
    same transfer operators as :func:`adjoint_sweep`.
    """
    forms = problem.forms
    dirichlet = forms.dofmap.dirichlet_mask
    phi_rows = forms.dofmap.phi()
    n_steps = trajectory.n_steps
    dt = problem.grid.dt

    dadjoints = np.zeros((n_steps + 1, forms.n_dofs))
    for m in range(n_steps, 0, -1):
        dphase = dstates[m][phi_rows]
        rhs = forms.embed_phase_vector(problem.tracking_second_derivative(m, dphase))
        rhs -= dt[m - 1] * forms.curvature_action(
            trajectory.states[m], dstates[m], adjoints[m]
        )
        if m < n_steps:
            rhs[phi_rows] += trajectory.transfer[m + 1] @ dadjoints[m + 1][phi_rows]
        rhs[dirichlet] = 0.0
        dadjoints[m] = trajectory.factors[m].solve(rhs, transpose=True)
    dadjoints[0] = dadjoints[1]
    return dadjoints
