"""Reference element, assembly, and linear algebra checks."""

import numpy as np
import pytest
from scipy import sparse

from pffc.fem import (
    CellGeometry,
    Factorization,
    SolverFailure,
    apply_dirichlet,
    assemble_boundary_component_coupling,
    assemble_boundary_mass,
    assemble_bulk_mass,
    assemble_stiffness,
    build_dofmap,
    bulk_quadrature,
    q1_shape,
    q1_shape_grad,
    solve_linear,
    solve_mass_cg,
)
from pffc.mesh import BoundaryTag, build_rectangle_mesh


class TestReferenceElement:
    def test_nodal_values(self):
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        np.testing.assert_allclose(q1_shape(corners), np.eye(4), atol=1e-15)

    def test_center_and_edge_midpoint(self):
        np.testing.assert_allclose(
            q1_shape(np.array([[0.5, 0.5]]))[0], [0.25, 0.25, 0.25, 0.25]
        )
        np.testing.assert_allclose(
            q1_shape(np.array([[0.5, 0.0]]))[0], [0.5, 0.5, 0.0, 0.0]
        )

    def test_partition_of_unity(self):
        rng = np.random.default_rng(7)
        pts = rng.random((100, 2))
        np.testing.assert_allclose(q1_shape(pts).sum(axis=1), 1.0, atol=1e-14)
        np.testing.assert_allclose(
            q1_shape_grad(pts).sum(axis=1), 0.0, atol=1e-14
        )

    def test_quadrature_exactness(self):
        # 2x2 Gauss integrates bilinear polynomials (degree 3 per axis) exactly.
        pts, wts = bulk_quadrature()
        assert wts.sum() == pytest.approx(1.0)
        f = pts[:, 0] ** 3 * pts[:, 1] ** 3
        assert wts @ f == pytest.approx(1.0 / 16.0, rel=1e-14)


class TestGeometryCache:
    def test_weights_sum_to_area(self):
        mesh = build_rectangle_mesh(9, 5, x1=1.7, y1=0.3)
        geom = CellGeometry(mesh)
        assert geom.weight.sum() == pytest.approx(1.7 * 0.3, rel=1e-13)

    def test_linear_field_gradient(self):
        mesh = build_rectangle_mesh(6, 4)
        geom = CellGeometry(mesh)
        field = 2.0 * mesh.vertices[:, 0] - 3.0 * mesh.vertices[:, 1]
        grad = geom.scalar_grad_at_qp(field)
        np.testing.assert_allclose(grad[..., 0], 2.0, atol=1e-12)
        np.testing.assert_allclose(grad[..., 1], -3.0, atol=1e-12)

    def test_strain_of_linear_displacement(self):
        mesh = build_rectangle_mesh(5, 5)
        geom = CellGeometry(mesh)
        dofmap = build_dofmap(mesh, BoundaryTag.DIRICHLET_BOTTOM)
        # u = (x + 2y, 3x) has strain exx=1, eyy=0, exy=(2+3)/2.
        u = np.zeros(dofmap.n_dofs)
        u[dofmap.ux()] = mesh.vertices[:, 0] + 2.0 * mesh.vertices[:, 1]
        u[dofmap.uy()] = 3.0 * mesh.vertices[:, 0]
        strain = geom.strain_at_qp(u[dofmap.cell_udofs])
        np.testing.assert_allclose(strain[..., 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(strain[..., 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(strain[..., 2], 2.5, atol=1e-12)


class TestAssembly:
    def test_unit_cell_mass(self):
        mesh = build_rectangle_mesh(1, 1)
        mass = assemble_bulk_mass(CellGeometry(mesh)).toarray()
        # Vertex ids are lexicographic: 0=(0,0), 1=(1,0), 2=(0,1), 3=(1,1).
        expected = (
            np.array(
                [
                    [4, 2, 2, 1],
                    [2, 4, 1, 2],
                    [2, 1, 4, 2],
                    [1, 2, 2, 4],
                ]
            )
            / 36.0
        )
        np.testing.assert_allclose(mass, expected, atol=1e-15)

    def test_mass_integrates_constants(self):
        mesh = build_rectangle_mesh(13, 8, x1=0.9, y1=1.4)
        mass = assemble_bulk_mass(CellGeometry(mesh))
        ones = np.ones(mesh.n_vertices)
        assert ones @ mass @ ones == pytest.approx(0.9 * 1.4, rel=1e-13)

    def test_weighted_mass_restricts(self):
        mesh = build_rectangle_mesh(4, 4)
        geom = CellGeometry(mesh)
        coeff = np.zeros((geom.n_cells, geom.n_qp))
        full = assemble_bulk_mass(geom, qp_coeff=coeff + 1.0)
        off = assemble_bulk_mass(geom, qp_coeff=coeff)
        np.testing.assert_allclose(
            full.toarray(), assemble_bulk_mass(geom).toarray(), atol=1e-15
        )
        assert abs(off).sum() == 0.0

    def test_stiffness_energy_of_linear_field(self):
        mesh = build_rectangle_mesh(10, 10)
        stiff = assemble_stiffness(CellGeometry(mesh))
        field = 3.0 * mesh.vertices[:, 0] + 4.0 * mesh.vertices[:, 1]
        # |grad|^2 = 25 over the unit square.
        assert field @ stiff @ field == pytest.approx(25.0, rel=1e-12)
        ones = np.ones(mesh.n_vertices)
        np.testing.assert_allclose(stiff @ ones, 0.0, atol=1e-12)

    def test_boundary_mass_single_edge(self):
        mesh = build_rectangle_mesh(1, 1)
        mass = assemble_boundary_mass(mesh, BoundaryTag.NEUMANN_TOP).toarray()
        block = mass[np.ix_([2, 3], [2, 3])]
        np.testing.assert_allclose(
            block, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15
        )
        assert mass.sum() == pytest.approx(1.0)

    def test_boundary_mass_length(self):
        mesh = build_rectangle_mesh(20, 10, x1=2.0)
        mass = assemble_boundary_mass(mesh, BoundaryTag.NEUMANN_TOP)
        ones = np.ones(mesh.n_vertices)
        assert ones @ mass @ ones == pytest.approx(2.0, rel=1e-13)

    def test_boundary_mass_missing_tag(self):
        mesh = build_rectangle_mesh(4, 4)
        with pytest.raises(ValueError):
            assemble_boundary_mass(mesh, BoundaryTag.NEUMANN_LEFT)

    def test_component_coupling_is_load_vector(self):
        mesh = build_rectangle_mesh(6, 6)
        dofmap = build_dofmap(mesh, BoundaryTag.DIRICHLET_BOTTOM)
        coup = assemble_boundary_component_coupling(
            mesh, dofmap, BoundaryTag.NEUMANN_TOP, "y"
        )
        load = coup @ np.ones(mesh.n_vertices)
        # Constant unit force on the top edge: total force equals edge length,
        # placed entirely in the y-displacement rows.
        assert load[dofmap.uy()].sum() == pytest.approx(1.0, rel=1e-13)
        assert np.all(load[dofmap.ux()] == 0.0)
        assert np.all(load[dofmap.phi()] == 0.0)
        top = mesh.nodes_with_tag(BoundaryTag.NEUMANN_TOP)
        nonzero = np.flatnonzero(load[dofmap.uy()])
        np.testing.assert_array_equal(np.sort(nonzero), np.sort(top))


class TestDirichletAndSolvers:
    def test_apply_dirichlet_structure(self):
        rng = np.random.default_rng(3)
        a = rng.random((6, 6))
        a = sparse.csr_matrix(a + a.T)
        mask = np.zeros(6, dtype=bool)
        mask[[1, 4]] = True
        out = apply_dirichlet(a, mask).toarray()
        assert out[1, 1] == 1.0 and out[4, 4] == 1.0
        assert np.all(out[1, [0, 2, 3, 5]] == 0.0)
        assert np.all(out[[0, 2, 3, 5], 4] == 0.0)
        np.testing.assert_allclose(out, out.T)

    def test_solve_linear_roundtrip(self):
        mesh = build_rectangle_mesh(8, 8)
        geom = CellGeometry(mesh)
        a = assemble_stiffness(geom) + assemble_bulk_mass(geom)
        rng = np.random.default_rng(11)
        x_ref = rng.standard_normal(mesh.n_vertices)
        x = solve_linear(a.tocsr(), a @ x_ref)
        np.testing.assert_allclose(x, x_ref, atol=1e-9)

    def test_solve_linear_rejects_singular(self):
        a = sparse.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SolverFailure):
            solve_linear(a, np.array([1.0, 0.0]))

    def test_factorization_transpose(self):
        rng = np.random.default_rng(5)
        a = sparse.csr_matrix(rng.random((7, 7)) + 7 * np.eye(7))
        lu = Factorization(a)
        b = rng.standard_normal(7)
        np.testing.assert_allclose(a @ lu.solve(b), b, atol=1e-12)
        np.testing.assert_allclose(a.T @ lu.solve(b, transpose=True), b, atol=1e-12)

    def test_mass_cg_matches_direct(self):
        mesh = build_rectangle_mesh(10, 10)
        mass = assemble_bulk_mass(CellGeometry(mesh)).tocsr()
        rng = np.random.default_rng(2)
        rhs = rng.standard_normal(mesh.n_vertices)
        x_cg = solve_mass_cg(mass, rhs)
        x_lu = solve_linear(mass, rhs)
        np.testing.assert_allclose(x_cg, x_lu, atol=1e-10)
