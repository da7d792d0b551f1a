"""Coupled displacement/phase-field fracture model and control problem data.

The state of one time slab stacks the two displacement components and the
phase field into a single vector (see :class:`pffc.fem.DofMap`).  This
module assembles the stationarity residual of the regularized fracture
energy, its state Jacobian, and the curvature action needed by
Hessian-vector products; it also defines the boundary control space, the
desired-phase data, and the tracking-plus-penalty objective.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import sparse

from .fem import (
    VOIGT_WEIGHTS,
    CellGeometry,
    DofMap,
    Factorization,
    assemble_boundary_component_coupling,
    assemble_boundary_mass,
    assemble_bulk_mass,
    assemble_stiffness,
    build_dofmap,
    scatter_vector,
)
from .mesh import BoundaryTag, Mesh


def lame_parameters(young: float, poisson: float, plane: str = "strain") -> tuple[float, float]:
    """First and second Lame constants from engineering moduli.

    Parameters
    ----------
    young, poisson : float
        Young's modulus and Poisson ratio.
    plane : {"strain", "stress"}
        2-D reduction; plane stress replaces the volumetric constant by its
        thin-sheet effective value.
    """
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    if plane == "stress":
        lam = 2.0 * mu * lam / (lam + 2.0 * mu)
    elif plane != "strain":
        raise ValueError(f"plane must be 'strain' or 'stress', got {plane!r}")
    return mu, lam


def elasticity_matrix(mu: float, lam: float) -> np.ndarray:
    """Voigt map from strain (exx, eyy, exy) to stress (sxx, syy, sxy)."""
    return np.array(
        [
            [2.0 * mu + lam, lam, 0.0],
            [lam, 2.0 * mu + lam, 0.0],
            [0.0, 0.0, 2.0 * mu],
        ]
    )


def degradation(phase: np.ndarray, residual_stiffness: float) -> np.ndarray:
    """Stiffness degradation factor: quadratic in the phase field, floored
    at the residual stiffness so the cracked material keeps a trace of
    elasticity."""
    return (1.0 - residual_stiffness) * phase**2 + residual_stiffness


def degradation_derivative(phase: np.ndarray, residual_stiffness: float) -> np.ndarray:
    return 2.0 * (1.0 - residual_stiffness) * phase


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Material, regularization, and constraint-enforcement parameters.

    ``length_scale`` is the crack regularization width and is stored
    explicitly rather than derived from the mesh.  The irreversibility
    ``penalty`` must dominate the ``viscosity`` by at least a factor of
    ten, otherwise the viscous term can mask constraint violations.
    """

    length_scale: float
    young: float = 1.0e6
    poisson: float = 0.2
    toughness: float = 1.0
    residual_stiffness: float = 1.0e-10
    viscosity: float = 1.0e3
    penalty: float = 1.0e5
    plane: str = "strain"

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ValueError("length_scale must be positive")
        if not 0.0 < self.residual_stiffness < 1.0:
            raise ValueError("residual_stiffness must lie in (0, 1)")
        if self.viscosity > self.penalty / 10.0:
            raise ValueError("viscosity must not exceed a tenth of the penalty")
        lame_parameters(self.young, self.poisson, self.plane)

    @property
    def lame(self) -> tuple[float, float]:
        return lame_parameters(self.young, self.poisson, self.plane)


class FractureForms:
    """Assembled forms of the coupled fracture system on one mesh.

    Precomputes the per-quadrature-point elastic energy pairing of
    displacement basis functions, the constant part of the phase-field
    block, and the scalar mass matrix, so that residual and Jacobian
    evaluations reduce to small einsum contractions plus sparse scatters.
    """

    def __init__(
        self,
        mesh: Mesh,
        params: ModelParams,
        dirichlet_tags=BoundaryTag.DIRICHLET_BOTTOM,
    ):
        self.mesh = mesh
        self.params = params
        self.geom = CellGeometry(mesh)
        self.dofmap = build_dofmap(mesh, dirichlet_tags)

        mu, lam = params.lame
        self.elasticity = elasticity_matrix(mu, lam)

        geom = self.geom
        # energy_pairing[c, q, a, b] = w |J| sigma(psi_b) : strain(psi_a),
        # symmetric in (a, b); all elastic terms contract against it.
        stress_basis = np.einsum("st,cqbt->cqbs", self.elasticity, geom.strain)
        self.energy_pairing = np.einsum(
            "cq,cqas,s,cqbs->cqab",
            geom.weight,
            geom.strain,
            VOIGT_WEIGHTS,
            stress_basis,
        )

        gc, eps = params.toughness, params.length_scale
        self.mass_phi = assemble_bulk_mass(geom).tocsr()
        self.phi_linear = (
            gc * eps * assemble_stiffness(geom) + (gc / eps) * self.mass_phi
        ).tocsr()
        self.phi_source = (gc / eps) * (self.mass_phi @ np.ones(mesh.n_vertices))

    # ------------------------------------------------------------------
    # state vector helpers

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    def phase_of(self, state: np.ndarray) -> np.ndarray:
        return state[self.dofmap.phi()]

    def embed_phase_vector(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dofmap.n_dofs)
        out[self.dofmap.phi()] = vec
        return out

    def embed_phase_matrix(self, mat: sparse.spmatrix) -> sparse.csr_matrix:
        """Lift an (n_nodes, n_nodes) phase block into the full system."""
        coo = mat.tocoo()
        off = 2 * self.dofmap.n_nodes
        return sparse.coo_matrix(
            (coo.data, (coo.row + off, coo.col + off)),
            shape=(self.n_dofs, self.n_dofs),
        ).tocsr()

    # ------------------------------------------------------------------
    # quasi-static forms

    def residual(self, state: np.ndarray, load: np.ndarray | None = None) -> np.ndarray:
        """Stationarity residual of the degraded elastic plus surface energy.

        Rows follow the dof layout; ``load`` is an optional assembled
        right-hand side (boundary forces) subtracted from the result.
        """
        dm, geom = self.dofmap, self.geom
        kappa = self.params.residual_stiffness
        u_cell = state[dm.cell_udofs]
        phase = state[dm.phi()]
        phase_q = geom.scalar_at_qp(phase)

        # pair_u[c, q, a] = w sigma(u) : strain(psi_a)
        pair_u = np.einsum("cqab,cb->cqa", self.energy_pairing, u_cell)
        energy_q = np.einsum("cqa,ca->cq", pair_u, u_cell)

        local_u = degradation(phase_q, kappa)[..., None] * pair_u
        local_phase = np.einsum(
            "cq,qa->ca", (1.0 - kappa) * phase_q * energy_q, geom.shape
        )

        out = scatter_vector(dm.cell_udofs, local_u.sum(axis=1), dm.n_dofs)
        out[dm.phi()] += self.phi_linear @ phase - self.phi_source
        out[dm.phi()] += scatter_vector(self.mesh.cells, local_phase, dm.n_nodes)
        if load is not None:
            out -= load
        return out

    def jacobian(self, state: np.ndarray) -> sparse.csr_matrix:
        """State derivative of :meth:`residual`; symmetric because the
        residual is itself an energy gradient."""
        dm, geom = self.dofmap, self.geom
        kappa = self.params.residual_stiffness
        u_cell = state[dm.cell_udofs]
        phase_q = geom.scalar_at_qp(state[dm.phi()])

        pair_u = np.einsum("cqab,cb->cqa", self.energy_pairing, u_cell)
        energy_q = np.einsum("cqa,ca->cq", pair_u, u_cell)
        g_q = degradation(phase_q, kappa)
        gp_q = degradation_derivative(phase_q, kappa)

        local = np.zeros((geom.n_cells, 12, 12))
        local[:, 0:8, 0:8] = np.einsum("cq,cqab->cab", g_q, self.energy_pairing)
        cross = np.einsum("cq,cqa,qb->cab", gp_q, pair_u, geom.shape)
        local[:, 0:8, 8:12] = cross
        local[:, 8:12, 0:8] = cross.transpose(0, 2, 1)
        local[:, 8:12, 8:12] = (1.0 - kappa) * np.einsum(
            "cq,qa,qb->cab", energy_q, geom.shape, geom.shape
        )

        dofs = dm.cell_alldofs
        nloc = dofs.shape[1]
        rows = np.repeat(dofs[:, :, None], nloc, axis=2).ravel()
        cols = np.repeat(dofs[:, None, :], nloc, axis=1).ravel()
        mat = sparse.coo_matrix(
            (local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)
        ).tocsr()
        return (mat + self.embed_phase_matrix(self.phi_linear)).tocsr()

    def curvature_action(
        self, state: np.ndarray, direction: np.ndarray, outer: np.ndarray
    ) -> np.ndarray:
        """Second state derivative of the forms, as a vector in the test slot.

        Component ``i`` equals the Jacobian differentiated once more in
        ``direction``, contracted with the fixed field ``outer`` (the
        adjoint during Hessian sweeps).  Symmetric under swapping
        ``direction`` with the test slot, which the finite-difference
        oracle against :meth:`jacobian` exercises.
        """
        dm, geom = self.dofmap, self.geom
        two_k = 2.0 * (1.0 - self.params.residual_stiffness)

        u_cell = state[dm.cell_udofs]
        du_cell = direction[dm.cell_udofs]
        zu_cell = outer[dm.cell_udofs]
        phase_q = geom.scalar_at_qp(state[dm.phi()])
        dphase_q = geom.scalar_at_qp(direction[dm.phi()])
        zphase_q = geom.scalar_at_qp(outer[dm.phi()])

        pair_u = np.einsum("cqab,cb->cqa", self.energy_pairing, u_cell)
        pair_du = np.einsum("cqab,cb->cqa", self.energy_pairing, du_cell)
        pair_zu = np.einsum("cqab,cb->cqa", self.energy_pairing, zu_cell)

        work_u_zu = np.einsum("cqa,ca->cq", pair_u, zu_cell)
        work_du_zu = np.einsum("cqa,ca->cq", pair_du, zu_cell)
        work_du_u = np.einsum("cqa,ca->cq", pair_du, u_cell)

        local_u = two_k * (
            (phase_q * dphase_q)[..., None] * pair_zu
            + (dphase_q * zphase_q)[..., None] * pair_u
            + (phase_q * zphase_q)[..., None] * pair_du
        )
        coeff = two_k * (
            dphase_q * work_u_zu + phase_q * work_du_zu + zphase_q * work_du_u
        )
        local_phase = np.einsum("cq,qa->ca", coeff, geom.shape)

        out = scatter_vector(dm.cell_udofs, local_u.sum(axis=1), dm.n_dofs)
        out[dm.phi()] += scatter_vector(self.mesh.cells, local_phase, dm.n_nodes)
        return out

    # ------------------------------------------------------------------
    # irreversibility penalty and viscosity (time-slab coupling)

    def healing_mask(self, phase_new: np.ndarray, phase_old: np.ndarray) -> np.ndarray:
        """Quadrature-point indicator of strict phase-field increase."""
        new_q = self.geom.scalar_at_qp(phase_new)
        old_q = self.geom.scalar_at_qp(phase_old)
        return (new_q > old_q).astype(float)

    def transfer_matrix(self, mask: np.ndarray) -> sparse.csr_matrix:
        """Linearized slab-coupling operator on the phase block.

        Penalty-weighted mass restricted to the healing set plus the
        viscous mass; multiplies phase jumps in the stepping equations and
        their adjoints.
        """
        p = self.params
        return (
            p.penalty * assemble_bulk_mass(self.geom, qp_coeff=mask)
            + p.viscosity * self.mass_phi
        ).tocsr()

    def penalty_residual(self, phase_new: np.ndarray, phase_old: np.ndarray) -> np.ndarray:
        """Nodal residual of the one-sided penalty plus viscous jump term.

        The penalty integrand uses the positive part of the pointwise jump,
        so this agrees with ``transfer_matrix(mask) @ (phase_new -
        phase_old)`` exactly when ``mask`` is the current healing mask.
        """
        geom = self.geom
        jump_q = geom.scalar_at_qp(phase_new - phase_old)
        local = np.einsum(
            "cq,qa->ca", geom.weight * np.maximum(jump_q, 0.0), geom.shape
        )
        out = self.params.penalty * scatter_vector(
            self.mesh.cells, local, self.dofmap.n_nodes
        )
        out += self.params.viscosity * (self.mass_phi @ (phase_new - phase_old))
        return out


# ----------------------------------------------------------------------
# controls


def _boundary_arclength(mesh: Mesh, nodes: np.ndarray) -> np.ndarray:
    """Plot coordinate along one straight control boundary."""
    coords = mesh.vertices[nodes]
    span = coords.max(axis=0) - coords.min(axis=0)
    axis = int(np.argmax(span))
    return coords[:, axis] - coords[:, axis].min()


class ControlSpace:
    """Discretized Neumann force densities on the control boundary.

    ``kind`` selects the parametrization: "scalar" drives the whole
    boundary with one amplitude, "nodal" carries one coefficient per
    boundary vertex.  Multiple (tag, component) boundaries share vertices
    at corners, so a corner node contributes a single coefficient that
    loads both adjacent edges.
    """

    def __init__(self, mesh: Mesh, dofmap: DofMap, boundaries, kind: str = "scalar"):
        if kind not in ("scalar", "nodal"):
            raise ValueError("kind must be 'scalar' or 'nodal'")
        self.kind = kind
        self.boundaries = tuple((BoundaryTag(t), c) for t, c in boundaries)

        coupling = None
        riesz = None
        ordered_nodes: list[int] = []
        seen: set[int] = set()
        for tag, component in self.boundaries:
            part = assemble_boundary_component_coupling(mesh, dofmap, tag, component)
            mass = assemble_boundary_mass(mesh, tag)
            coupling = part if coupling is None else coupling + part
            riesz = mass if riesz is None else riesz + mass
            tagged = mesh.nodes_with_tag(tag)
            order = np.argsort(_boundary_arclength(mesh, tagged), kind="stable")
            for node in tagged[order]:
                if int(node) not in seen:
                    seen.add(int(node))
                    ordered_nodes.append(int(node))
        self.nodes = np.array(ordered_nodes, dtype=np.int64)

        # Forces on constrained displacement dofs cannot do work; drop the
        # rows so adjoint pairings restrict to the free unknowns.
        free = sparse.diags((~dofmap.dirichlet_mask).astype(float))
        self.node_coupling = (free @ coupling)[:, self.nodes].tocsr()
        self.node_riesz = riesz.tocsr()[self.nodes][:, self.nodes].tocsr()

        offsets = []
        offset = 0.0
        for tag, _ in self.boundaries:
            tagged = mesh.nodes_with_tag(tag)
            arc = _boundary_arclength(mesh, tagged)
            offsets.append((set(int(n) for n in tagged), offset, dict(zip(tagged.tolist(), arc))))
            offset += float(arc.max())
        coords = np.empty(self.nodes.size)
        for i, node in enumerate(self.nodes):
            for members, off, arc in offsets:
                if int(node) in members:
                    coords[i] = off + arc[int(node)]
                    break
        self.arclength = coords

        if kind == "scalar":
            ones = np.ones(self.nodes.size)
            self.coupling = sparse.csr_matrix(
                (self.node_coupling @ ones)[:, None]
            )
            self.riesz = sparse.csr_matrix([[float(ones @ (self.node_riesz @ ones))]])
        else:
            self.coupling = self.node_coupling
            self.riesz = self.node_riesz
        self._riesz_factor: Factorization | None = None

    @property
    def dim(self) -> int:
        return self.coupling.shape[1]

    def load(self, coeff: np.ndarray) -> np.ndarray:
        """Assembled force vector of the control with the given coefficients."""
        return self.coupling @ np.atleast_1d(coeff)

    def baseline_load(self, node_values: np.ndarray) -> np.ndarray:
        """Force vector of a fixed nodal density (additive, not optimized)."""
        return self.node_coupling @ node_values

    def adjoint_pairing(self, vec: np.ndarray) -> np.ndarray:
        """Contraction of a state-space vector against the control loads."""
        return self.coupling.T @ vec

    def apply_inner(self, coeff: np.ndarray) -> np.ndarray:
        return self.riesz @ np.atleast_1d(coeff)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.atleast_1d(a) @ (self.riesz @ np.atleast_1d(b)))

    def solve_riesz(self, coeff: np.ndarray) -> np.ndarray:
        """Boundary-mass solve turning a dual vector into a gradient."""
        if self._riesz_factor is None:
            self._riesz_factor = Factorization(self.riesz)
        return self._riesz_factor.solve(np.atleast_1d(coeff).astype(float))

    def uniform(self, value: float) -> np.ndarray:
        """Coefficients of the spatially constant density with this value."""
        return np.full(self.dim, float(value))


@dataclasses.dataclass(frozen=True)
class Control:
    """One control iterate.

    ``values`` has shape (dim,) for controls constant in time, or
    (n_steps, dim) when every time slab carries its own coefficients.
    """

    values: np.ndarray

    @property
    def per_step(self) -> bool:
        return self.values.ndim == 2

    def at_step(self, m: int) -> np.ndarray:
        """Coefficients acting on slab m (1-based)."""
        return self.values[m - 1] if self.per_step else self.values

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def like(self, flat: np.ndarray) -> "Control":
        return Control(np.asarray(flat, dtype=float).reshape(self.values.shape))

    def extremum(self) -> float:
        """Signed coefficient of largest magnitude (the reported force)."""
        v = self.values.ravel()
        return float(v[np.argmax(np.abs(v))])


# ----------------------------------------------------------------------
# time grid, targets, and the assembled problem


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Partition of the process interval into left-open slabs."""

    points: np.ndarray

    @classmethod
    def uniform(cls, t_end: float, n_steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, float(t_end), n_steps + 1))

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)


@dataclasses.dataclass(frozen=True)
class DesiredPhase:
    """Target phase field of the tracking term.

    ``values`` is either one nodal field used at every time point or a
    full (n_steps + 1, n_nodes) table indexed by time point.
    """

    values: np.ndarray

    def at_step(self, m: int) -> np.ndarray:
        return self.values if self.values.ndim == 1 else self.values[m]


@dataclasses.dataclass
class FractureControlProblem:
    """A complete optimal control instance.

    Bundles the spatial forms, the control space, the time grid, the
    tracking target, the regularization weight, the nominal force the
    Tikhonov term pulls toward, an optional fixed baseline force density
    (nodal values on the control boundary), and the initial phase field.
    """

    forms: FractureForms
    control_space: ControlSpace
    grid: TimeGrid
    desired: DesiredPhase
    tikhonov_weight: float
    nominal_force: float
    initial_phase: np.ndarray
    baseline_force: np.ndarray | None = None

    def __post_init__(self):
        self._baseline_load = (
            None
            if self.baseline_force is None
            else self.control_space.baseline_load(self.baseline_force)
        )

    def load(self, control: Control, m: int) -> np.ndarray:
        """Total boundary force vector acting on slab m."""
        out = self.control_space.load(control.at_step(m))
        if self._baseline_load is not None:
            out = out + self._baseline_load
        return out

    def initial_control(self, value: float) -> Control:
        return Control(self.control_space.uniform(value))

    # ------------------------------------------------------------------
    # objective

    def tracking_cost(self, phases: np.ndarray) -> float:
        """Slab-weighted squared mass-norm distance to the target.

        ``phases`` holds the nodal phase fields at all time points,
        shape (n_steps + 1, n_nodes); the sum runs over slabs 1..M.
        """
        mass = self.forms.mass_phi
        dt = self.grid.dt
        acc = 0.0
        for m in range(1, self.grid.n_steps + 1):
            diff = phases[m] - self.desired.at_step(m)
            acc += dt[m - 1] * float(diff @ (mass @ diff))
        return 0.5 * acc

    def tikhonov_cost(self, control: Control) -> float:
        space = self.control_space
        nominal = space.uniform(self.nominal_force)
        dt = self.grid.dt
        acc = 0.0
        for m in range(1, self.grid.n_steps + 1):
            dev = control.at_step(m) - nominal
            acc += dt[m - 1] * space.inner(dev, dev)
        return 0.5 * self.tikhonov_weight * acc

    def cost(self, control: Control, phases: np.ndarray) -> tuple[float, float, float]:
        """(total, tracking, tikhonov) triple for logging."""
        track = self.tracking_cost(phases)
        tik = self.tikhonov_cost(control)
        return track + tik, track, tik

    def tracking_derivative(self, m: int, phase_m: np.ndarray) -> np.ndarray:
        """Phase-block derivative of the tracking term at time point m."""
        diff = phase_m - self.desired.at_step(m)
        return self.grid.dt[m - 1] * (self.forms.mass_phi @ diff)

    def tracking_second_derivative(self, m: int, dphase_m: np.ndarray) -> np.ndarray:
        return self.grid.dt[m - 1] * (self.forms.mass_phi @ dphase_m)

    def initial_state(self) -> np.ndarray:
        """Zero displacement with the prescribed initial phase field."""
        return self.forms.embed_phase_vector(self.initial_phase)
