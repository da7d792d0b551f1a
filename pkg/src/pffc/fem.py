"""Bilinear quadrilateral finite elements with sparse assembly.

Provides the reference element tables (shape functions on the unit square,
tensor Gauss quadrature), per-mesh geometry caches, scalar and vector
assembly helpers, boundary-edge quadrature, Dirichlet elimination, and
direct sparse solves.  Everything downstream (the fracture forms, the time
stepping, the sweeps) is built from these pieces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import EDGE_VERTICES, Mesh

# NodalField: plain 1-D float array indexed by vertex id (scalar fields) or
# by unknown id (stacked fields); kept as an alias rather than a wrapper.
NodalField = np.ndarray

_G = 0.5 / np.sqrt(3.0)
GAUSS_1D_POINTS = np.array([0.5 - _G, 0.5 + _G])
GAUSS_1D_WEIGHTS = np.array([0.5, 0.5])

# Voigt convention (exx, eyy, exy) with the tensor shear component; double
# contractions therefore weight the shear slot by 2.
VOIGT_WEIGHTS = np.array([1.0, 1.0, 2.0])


class SolverFailure(RuntimeError):
    """A linear system could not be solved to the required accuracy."""


def q1_shape(points: np.ndarray) -> np.ndarray:
    """Values of the four bilinear shape functions at reference points.

    Points live in the unit square with vertices ordered counterclockwise
    from (0,0).  Returns an array of shape ``(len(points), 4)``.
    """
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    return np.column_stack(
        [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y]
    )


def q1_shape_grad(points: np.ndarray) -> np.ndarray:
    """Reference gradients of the bilinear shape functions, shape (k, 4, 2)."""
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    gx = np.stack([-(1 - y), 1 - y, y, -y], axis=1)
    gy = np.stack([-(1 - x), -x, x, 1 - x], axis=1)
    return np.stack([gx, gy], axis=2)


def bulk_quadrature() -> tuple[np.ndarray, np.ndarray]:
    """2x2 tensor Gauss rule on the reference square: (points, weights)."""
    pts = np.array(
        [(a, b) for b in GAUSS_1D_POINTS for a in GAUSS_1D_POINTS]
    )
    wts = np.array(
        [wa * wb for wb in GAUSS_1D_WEIGHTS for wa in GAUSS_1D_WEIGHTS]
    )
    return pts, wts


@dataclass(frozen=True)
class DofMap:
    """Unknown numbering for the coupled displacement/phase-field system.

    The ``3 * n_nodes`` unknowns are stacked by field: x-displacements,
    then y-displacements, then the phase field.  ``dirichlet_mask`` marks
    the displacement unknowns clamped on the Dirichlet boundary; the phase
    field carries no essential conditions.
    """

    n_nodes: int
    dirichlet_nodes: np.ndarray
    cells: np.ndarray

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    def ux(self, nodes: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n_nodes) if nodes is None else np.asarray(nodes)
        return idx

    def uy(self, nodes: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n_nodes) if nodes is None else np.asarray(nodes)
        return self.n_nodes + idx

    def phi(self, nodes: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n_nodes) if nodes is None else np.asarray(nodes)
        return 2 * self.n_nodes + idx

    @property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[self.ux(self.dirichlet_nodes)] = True
        mask[self.uy(self.dirichlet_nodes)] = True
        return mask

    @property
    def cell_udofs(self) -> np.ndarray:
        """Per cell, the 8 displacement unknowns [ux(4), uy(4)]."""
        return np.concatenate([self.cells, self.n_nodes + self.cells], axis=1)

    @property
    def cell_phidofs(self) -> np.ndarray:
        return 2 * self.n_nodes + self.cells

    @property
    def cell_alldofs(self) -> np.ndarray:
        return np.concatenate([self.cell_udofs, self.cell_phidofs], axis=1)


def build_dofmap(mesh: Mesh, dirichlet_tags) -> DofMap:
    """Dof numbering with displacements clamped on the given tag(s)."""
    return DofMap(
        n_nodes=mesh.n_vertices,
        dirichlet_nodes=mesh.nodes_with_tag(dirichlet_tags),
        cells=mesh.cells,
    )


class CellGeometry:
    """Quadrature-level geometry cache for one mesh.

    Attributes
    ----------
    shape : ndarray (nq, 4)
        Shape function values at the bulk quadrature points.
    grad : ndarray (nc, nq, 4, 2)
        Physical shape gradients per cell and quadrature point.
    weight : ndarray (nc, nq)
        Quadrature weight times Jacobian determinant.
    strain : ndarray (nc, nq, 8, 3)
        Voigt strain of the 8 displacement basis functions
        (x-components first, then y-components).
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        pts, wts = bulk_quadrature()
        self.qpoints = pts
        self.shape = q1_shape(pts)
        ref_grad = q1_shape_grad(pts)

        coords = mesh.vertices[mesh.cells]
        # Bilinear map Jacobian at each quadrature point: J = sum_a X_a grad N_a.
        jac = np.einsum("caj,qak->cqjk", coords, ref_grad)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh contains inverted or degenerate cells")
        inv = np.empty_like(jac)
        inv[..., 0, 0] = jac[..., 1, 1]
        inv[..., 1, 1] = jac[..., 0, 0]
        inv[..., 0, 1] = -jac[..., 0, 1]
        inv[..., 1, 0] = -jac[..., 1, 0]
        inv /= det[..., None, None]

        self.grad = np.einsum("qak,cqkj->cqaj", ref_grad, inv)
        self.weight = wts[None, :] * det
        self.qcoords = np.einsum("qa,caj->cqj", self.shape, coords)

        nc, nq = self.weight.shape
        strain = np.zeros((nc, nq, 8, 3))
        strain[..., 0:4, 0] = self.grad[..., 0]          # exx of x-basis
        strain[..., 0:4, 2] = 0.5 * self.grad[..., 1]    # exy of x-basis
        strain[..., 4:8, 1] = self.grad[..., 1]          # eyy of y-basis
        strain[..., 4:8, 2] = 0.5 * self.grad[..., 0]    # exy of y-basis
        self.strain = strain

    @property
    def n_cells(self) -> int:
        return self.weight.shape[0]

    @property
    def n_qp(self) -> int:
        return self.weight.shape[1]

    def scalar_at_qp(self, nodal: NodalField) -> np.ndarray:
        """Interpolate a scalar nodal field to all quadrature points."""
        return np.einsum("qa,ca->cq", self.shape, nodal[self.mesh.cells])

    def scalar_grad_at_qp(self, nodal: NodalField) -> np.ndarray:
        return np.einsum("cqaj,ca->cqj", self.grad, nodal[self.mesh.cells])

    def strain_at_qp(self, cell_u: np.ndarray) -> np.ndarray:
        """Voigt strain of a displacement field given per-cell u dofs (nc, 8)."""
        return np.einsum("cqas,ca->cqs", self.strain, cell_u)


def scatter_matrix(
    rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape: tuple[int, int]
) -> sparse.csr_matrix:
    """Sum per-cell dense blocks into a global CSR matrix.

    ``rows``/``cols`` hold the global ids of the local block axes, shaped
    (nc, k) and (nc, l) for ``local`` of shape (nc, k, l).
    """
    nc, k = rows.shape
    l = cols.shape[1]
    r = np.repeat(rows[:, :, None], l, axis=2).ravel()
    c = np.repeat(cols[:, None, :], k, axis=1).ravel()
    mat = sparse.coo_matrix((local.ravel(), (r, c)), shape=shape)
    return mat.tocsr()


def scatter_vector(dofs: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    """Sum per-cell local vectors (nc, k) into a global vector of length n."""
    out = np.zeros(n)
    np.add.at(out, dofs.ravel(), local.ravel())
    return out


def assemble_bulk_mass(geom: CellGeometry, qp_coeff: np.ndarray | None = None) -> sparse.csr_matrix:
    """Scalar mass matrix, optionally weighted by a coefficient at quadrature points.

    With ``qp_coeff`` of shape (nc, nq) this assembles
    ``sum_qp w |J| c(x_q) N_a N_b``, which is how the restricted (masked)
    inner products of the time stepping are realized.
    """
    w = geom.weight if qp_coeff is None else geom.weight * qp_coeff
    local = np.einsum("cq,qa,qb->cab", w, geom.shape, geom.shape)
    n = geom.mesh.n_vertices
    return scatter_matrix(geom.mesh.cells, geom.mesh.cells, local, (n, n))


def assemble_stiffness(geom: CellGeometry) -> sparse.csr_matrix:
    """Scalar stiffness matrix for the gradient-gradient pairing."""
    local = np.einsum("cq,cqaj,cqbj->cab", geom.weight, geom.grad, geom.grad)
    n = geom.mesh.n_vertices
    return scatter_matrix(geom.mesh.cells, geom.mesh.cells, local, (n, n))


@dataclass(frozen=True)
class EdgeQuadrature:
    """Two-point Gauss data for the facets of one boundary tag set.

    ``nodes`` holds the (start, end) vertex ids of each facet; the shape
    values of those two vertices at the edge quadrature points are the 1-D
    hat traces (the other two cell basis functions vanish on the edge).
    """

    facet_nodes: np.ndarray     # (nf, 2)
    lengths: np.ndarray         # (nf,)
    point_shape: np.ndarray     # (2 qp, 2 nodes)
    point_coords: np.ndarray    # (nf, 2 qp, 2)

    @property
    def n_facets(self) -> int:
        return self.facet_nodes.shape[0]


def edge_quadrature(mesh: Mesh, tags) -> EdgeQuadrature:
    facets = mesh.facets_with_tag(tags)
    if facets.shape[0] == 0:
        raise ValueError(f"no boundary facets carry tag(s) {tags}")
    local = np.asarray(EDGE_VERTICES)[facets[:, 1]]
    ids = np.stack(
        [mesh.cells[facets[:, 0], local[:, 0]], mesh.cells[facets[:, 0], local[:, 1]]],
        axis=1,
    )
    a = mesh.vertices[ids[:, 0]]
    b = mesh.vertices[ids[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    t = GAUSS_1D_POINTS
    point_shape = np.column_stack([1 - t, t])
    point_coords = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    return EdgeQuadrature(ids, lengths, point_shape, point_coords)


def assemble_boundary_mass(mesh: Mesh, tags) -> sparse.csr_matrix:
    """Mass matrix of the scalar trace space on the tagged boundary part.

    A single straight edge of length L contributes the block
    [[L/3, L/6], [L/6, L/3]] to its two vertices.  Raises
    :class:`ValueError` when no facet carries the requested tags.
    """
    eq = edge_quadrature(mesh, tags)
    w = eq.lengths[:, None] * GAUSS_1D_WEIGHTS[None, :]
    local = np.einsum("fq,qa,qb->fab", w, eq.point_shape, eq.point_shape)
    n = mesh.n_vertices
    return scatter_matrix(eq.facet_nodes, eq.facet_nodes, local, (n, n))


def assemble_boundary_component_coupling(
    mesh: Mesh, dofmap: DofMap, tag, component: str
) -> sparse.csr_matrix:
    """Pairing of a boundary scalar with one displacement test component.

    Returns the (n_dofs, n_nodes) matrix with entries
    ``integral over the tagged edges of N_j N_i ds`` placed in the rows of
    the requested displacement component, so that ``matrix @ g`` is the load
    vector of a boundary force density ``g`` acting in that direction.
    """
    if component not in ("x", "y"):
        raise ValueError("component must be 'x' or 'y'")
    eq = edge_quadrature(mesh, tag)
    w = eq.lengths[:, None] * GAUSS_1D_WEIGHTS[None, :]
    local = np.einsum("fq,qa,qb->fab", w, eq.point_shape, eq.point_shape)
    rows = dofmap.ux(eq.facet_nodes) if component == "x" else dofmap.uy(eq.facet_nodes)
    return scatter_matrix(rows, eq.facet_nodes, local, (dofmap.n_dofs, dofmap.n_nodes))


def apply_dirichlet(matrix: sparse.spmatrix, mask: np.ndarray) -> sparse.csr_matrix:
    """Eliminate constrained unknowns: zero their rows/columns, unit diagonal.

    Symmetric elimination, so a symmetric input stays symmetric.
    """
    keep = (~mask).astype(float)
    d = sparse.diags(keep)
    out = (d @ matrix @ d + sparse.diags(mask.astype(float))).tocsr()
    out.sum_duplicates()
    return out


class Factorization:
    """Reusable sparse LU factorization with forward and transposed solves."""

    def __init__(self, matrix: sparse.spmatrix):
        self.shape = matrix.shape
        try:
            self._lu = splu(matrix.tocsc())
        except RuntimeError as exc:
            raise SolverFailure(f"sparse factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        return self._lu.solve(rhs, trans="T" if transpose else "N")


def solve_linear(
    matrix: sparse.spmatrix,
    rhs: np.ndarray,
    check_tol: float = 1e-12,
) -> np.ndarray:
    """Direct sparse solve with a residual verification.

    Raises :class:`SolverFailure` when the factorization breaks down or the
    relative residual exceeds ``check_tol`` (the system counts as
    unsolvable either way).
    """
    lu = Factorization(matrix)
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverFailure("linear solve produced non-finite entries")
    scale = np.linalg.norm(rhs)
    residual = np.linalg.norm(matrix @ x - rhs)
    if scale > 0 and residual > check_tol * scale:
        raise SolverFailure(
            f"linear solve residual {residual:.3e} exceeds {check_tol:.1e} * |rhs|"
        )
    return x


def solve_mass_cg(
    matrix: sparse.spmatrix,
    rhs: np.ndarray,
    rel_tol: float = 1e-14,
    max_iter: int | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for SPD mass-type systems.

    Kept as the optional iterative path; the direct solver is the default
    everywhere.
    """
    diag = matrix.diagonal()
    if np.any(diag <= 0):
        raise SolverFailure("mass CG requires a positive diagonal")
    x = np.zeros_like(rhs)
    r = rhs.astype(float).copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    stop = rel_tol * np.linalg.norm(rhs)
    n = matrix.shape[0] if max_iter is None else max_iter
    for _ in range(n):
        if np.linalg.norm(r) <= stop:
            break
        ap = matrix @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        if np.linalg.norm(r) > stop:
            raise SolverFailure("mass CG did not converge")
    return x


@dataclass(frozen=True)
class SparseOperator:
    """Minimal CSR-backed linear operator with forward and adjoint action."""

    matrix: sparse.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.T @ x
