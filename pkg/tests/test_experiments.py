"""Benchmark presets, problem assembly, homotopy schedules, and run artifacts."""

import dataclasses

import numpy as np
import pytest

from pffc.experiments import (
    EXIT_CONVERGED,
    EXIT_FORWARD_FAILURE,
    EXIT_LINESEARCH_FAILURE,
    EXIT_MAX_ITERATIONS,
    build_mesh,
    build_problem,
    desired_phase_values,
    homotopy_problems,
    initial_control,
    initial_phase_values,
    parse_boundaries,
    preset,
    run,
    scale_mesh,
)
from pffc.mesh import BoundaryTag

pytestmark = pytest.mark.filterwarnings("ignore:phase field increased")


def coarse_one(**overrides):
    config = dataclasses.replace(scale_mesh(preset(1), 0.25), n_steps=5)
    return dataclasses.replace(config, **overrides) if overrides else config


class TestPresets:
    def test_single_notch_benchmark_parameters(self):
        config = preset(1)
        assert (config.nx, config.ny, config.n_steps) == (64, 64, 40)
        assert config.tikhonov_weight == 4.75e-10
        assert config.nominal_force == 1.0e3
        assert config.initial_force == 1.0
        assert config.length_scale == 0.0884
        assert config.tol_abs == 5.0e-11
        assert config.control_kind == "scalar"

    def test_two_edge_benchmark_uses_nodal_forces(self):
        config = preset(2)
        assert config.control_kind == "nodal"
        assert parse_boundaries(config.control_boundaries) == [
            (BoundaryTag.NEUMANN_TOP, "y"),
            (BoundaryTag.NEUMANN_LEFT, "x"),
        ]
        assert config.initial_force == 10.0

    @pytest.mark.parametrize(
        "n, expected",
        [
            (1, 1.0),
            (2, 10.0),
            (3, 1.0),
            (4, 1.0),
            (5, 1.0),
            (6, 1.0),
        ],
    )
    def test_initial_forces(self, n, expected):
        assert preset(n).initial_force == expected

    def test_strip_benchmark_has_four_slits(self):
        config = preset(3)
        assert config.geometry == "strip"
        assert (config.x_end, config.y_end) == (2.2, 0.4)
        assert config.notches.count(";") == 3

    def test_counteracting_benchmark_has_a_baseline_and_no_target(self):
        config = preset(6)
        assert (config.baseline_offset, config.baseline_slope) == (850.0, 1800.0)
        assert config.desired_segments == ""
        assert config.desired_keeps_notches == 1
        assert config.nominal_force == -8.0e2

    @pytest.mark.parametrize("bad", [0, 7, -1])
    def test_out_of_range_indices_are_rejected(self, bad):
        with pytest.raises(ValueError, match="1..6"):
            preset(bad)


class TestMeshBuilding:
    def test_panel_mesh_counts(self):
        mesh = build_mesh(preset(5))
        assert mesh.n_cells == 19200
        assert mesh.n_vertices == 19521
        assert mesh.cell_diameter() == pytest.approx(np.sqrt(2) / 160)

    def test_panel_requires_equal_subdivisions(self):
        with pytest.raises(ValueError, match="one subdivision count"):
            build_mesh(dataclasses.replace(preset(5), ny=81))

    def test_unknown_geometry_is_rejected(self):
        with pytest.raises(ValueError, match="unknown geometry"):
            build_mesh(dataclasses.replace(preset(1), geometry="disc"))

    def test_strip_spans_its_stated_extent(self):
        mesh = build_mesh(scale_mesh(preset(3), 0.125))
        assert mesh.vertices[:, 0].max() == pytest.approx(2.2)
        assert mesh.vertices[:, 1].max() == pytest.approx(0.4)

    def test_rescaling_touches_only_the_subdivisions(self):
        config = scale_mesh(preset(1), 0.25)
        assert (config.nx, config.ny) == (16, 16)
        assert config.length_scale == preset(1).length_scale
        assert config.notches == preset(1).notches
        assert config.n_steps == preset(1).n_steps
        assert scale_mesh(config, 1.0) is config


class TestNodeSets:
    def test_slit_spans_three_node_rows(self):
        """A slit zeroes its own node row plus both neighbor rows, with
        endpoints included, so the touched cell rows carry no stiffness."""
        config = coarse_one()
        mesh = build_mesh(config)
        values = initial_phase_values(config, mesh)
        cracked = {tuple(v) for v in mesh.vertices[values == 0.0].round(6)}
        assert cracked == {
            (0.5 + k / 16, y) for k in range(9) for y in (0.4375, 0.5, 0.5625)
        }

    def test_target_band_is_open_at_its_endpoints(self):
        """Band nodes obey 0.3 < x < 0.5 strictly and |y - 0.5| <= one
        element diameter, so neither the slit tip nor the band start
        column belongs to the target."""
        config = dataclasses.replace(coarse_one(), desired_keeps_notches=0)
        mesh = build_mesh(config)
        values = desired_phase_values(config, mesh)
        target = {tuple(v) for v in mesh.vertices[values == 0.0].round(6)}
        assert target == {
            (x, y)
            for x in (0.3125, 0.375, 0.4375)
            for y in (0.4375, 0.5, 0.5625)
        }

    def test_empty_target_means_intact(self):
        config = scale_mesh(preset(6), 0.25)
        config = dataclasses.replace(config, desired_keeps_notches=0)
        mesh = build_mesh(config)
        np.testing.assert_array_equal(desired_phase_values(config, mesh), 1.0)

    def test_kept_slits_join_the_target(self):
        """The counteraction benchmark only penalizes crack growth, so its
        target field carries the initial slit instead of demanding that
        the slit heal."""
        config = scale_mesh(preset(6), 0.25)
        mesh = build_mesh(config)
        np.testing.assert_array_equal(
            desired_phase_values(config, mesh),
            initial_phase_values(config, mesh),
        )

    def test_malformed_segments_are_rejected(self):
        config = coarse_one(desired_segments="0.3,0.5")
        with pytest.raises(ValueError, match="needs 5 numbers"):
            desired_phase_values(config, build_mesh(config))

    @pytest.mark.parametrize("spec", ["middle:y", "top:z", "top"])
    def test_bad_boundary_specs_are_rejected(self, spec):
        with pytest.raises(ValueError, match="bad control boundary"):
            parse_boundaries(spec)


class TestProblemAssembly:
    def test_baseline_force_is_affine_in_arclength(self):
        config = scale_mesh(preset(6), 0.25)
        problem = build_problem(config)
        space = problem.control_space
        np.testing.assert_allclose(
            problem.baseline_force, 850.0 + 1800.0 * space.arclength
        )
        assert problem.baseline_force[0] == 850.0
        assert problem.baseline_force[-1] == pytest.approx(2650.0)

    def test_benchmarks_without_a_baseline_leave_it_unset(self):
        assert build_problem(coarse_one()).baseline_force is None

    def test_constant_layout_control(self):
        config = coarse_one()
        problem = build_problem(config)
        control = initial_control(config, problem)
        assert not control.per_step
        np.testing.assert_array_equal(control.values, [1.0])

    def test_per_step_layout_tiles_the_profile(self):
        config = coarse_one(control_layout="per_step")
        problem = build_problem(config)
        control = initial_control(config, problem)
        assert control.per_step
        assert control.values.shape == (5, 1)
        np.testing.assert_array_equal(control.values, 1.0)

    def test_unknown_layout_is_rejected(self):
        config = coarse_one(control_layout="ragged")
        problem = build_problem(config)
        with pytest.raises(ValueError, match="unknown control layout"):
            initial_control(config, problem)


class TestHomotopySchedules:
    def test_length_schedule_grows_the_target_monotonically(self):
        config = preset(1)
        base = build_problem(config)
        sizes = []
        for problem in homotopy_problems(
            dataclasses.replace(config, homotopy="length"), base
        ):
            assert problem.forms is base.forms
            sizes.append(int((problem.desired.at_step(1) == 0.0).sum()))
        assert len(sizes) == config.homotopy_length_steps + 1
        assert sizes[0] == int((base.desired.at_step(1) == 0.0).sum())
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] > sizes[0]

    def test_regularization_schedule_decays_geometrically(self):
        config = dataclasses.replace(coarse_one(), homotopy="tikhonov")
        base = build_problem(config)
        problems = list(homotopy_problems(config, base))
        assert len(problems) == config.homotopy_tikhonov_steps + 1
        for k, problem in enumerate(problems):
            assert problem.tikhonov_weight == pytest.approx(
                config.tikhonov_weight * 0.99**k
            )
            assert problem.desired is base.desired

    def test_length_schedule_needs_a_band(self):
        config = dataclasses.replace(
            scale_mesh(preset(6), 0.25), homotopy="length"
        )
        base = build_problem(config)
        with pytest.raises(ValueError, match="at least one target band"):
            list(homotopy_problems(config, base))

    def test_disabled_schedule_is_rejected(self):
        config = coarse_one()
        with pytest.raises(ValueError, match="no homotopy schedule"):
            list(homotopy_problems(config, build_problem(config)))


class TestRunDriver:
    def test_exit_codes_are_distinct(self):
        codes = {
            EXIT_CONVERGED,
            EXIT_FORWARD_FAILURE,
            EXIT_MAX_ITERATIONS,
            EXIT_LINESEARCH_FAILURE,
        }
        assert len(codes) == 4
        assert EXIT_CONVERGED == 0

    def test_run_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "run"
        report = run(coarse_one(max_iterations=2), out_dir=str(out))
        assert report.status == "max_iterations"
        assert report.exit_code == EXIT_MAX_ITERATIONS
        assert (out / "iters.csv").exists()
        assert (out / "control.csv").exists()
        assert (out / "state_m0005.vtk").exists()

        lines = (out / "iters.csv").read_text().splitlines()
        assert lines[0] == (
            "Step, Iter, CG, RelResidual, AbsResidual, Cost, Tracking, "
            "Tikhonov, Force"
        )
        assert len(lines) == len(report.records) + 1 == 4
        assert lines[1].startswith("0, 0, 0, 1.000000e+00")

        profile = (out / "control.csv").read_text().splitlines()
        assert profile[0] == "arclength, q"
        assert len(profile) == 18
        assert float(profile[1].split(",")[0]) == 0.0

    def test_initial_point_within_tolerance_exits_zero(self, tmp_path):
        out = tmp_path / "run"
        report = run(coarse_one(tol_abs=1e-6), out_dir=str(out))
        assert report.status == "converged"
        assert report.exit_code == EXIT_CONVERGED
        assert report.result.converged
        assert (out / "iters.csv").exists()
        assert len(report.records) == 1

    def test_runs_are_reproducible_byte_for_byte(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        run(coarse_one(max_iterations=1), out_dir=str(first))
        run(coarse_one(max_iterations=1), out_dir=str(second))
        assert (first / "iters.csv").read_bytes() == (
            second / "iters.csv"
        ).read_bytes()
        assert (first / "control.csv").read_bytes() == (
            second / "control.csv"
        ).read_bytes()

    def test_override_arguments_reach_the_config(self, tmp_path):
        report = run(preset(1), mesh_scale=0.25, n_steps=5, tol_abs=1e-6)
        assert (report.config.nx, report.config.n_steps) == (16, 5)
        assert report.config.tol_abs == 1e-6

    def test_iteration_budget_maps_to_its_exit_code(self):
        report = run(coarse_one(max_iterations=0, tol_abs=1e-30))
        assert report.status == "max_iterations"
        assert report.exit_code == EXIT_MAX_ITERATIONS
        assert len(report.records) == 1

    def test_forward_breakdown_maps_to_its_exit_code(self):
        report = run(coarse_one(forward_tol=0.0))
        assert report.status == "forward_failure"
        assert report.exit_code == EXIT_FORWARD_FAILURE
        assert report.records == []
        assert report.result is None

    def test_homotopy_run_reports_every_stage(self):
        config = dataclasses.replace(
            scale_mesh(preset(1), 0.125),
            n_steps=5,
            homotopy_tikhonov_steps=2,
            max_iterations=1,
        )
        report = run(config, homotopy="tikhonov")
        assert report.homotopy is not None
        assert report.homotopy.completed == 3
        steps = sorted({r.step for r in report.records})
        assert steps == [0, 1, 2]
