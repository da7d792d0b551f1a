"""Command line interface: argument handling, exit codes, artifacts."""

import dataclasses
import subprocess
import sys

import pytest

from pffc.cli import main
from pffc.config_io import write_config
from pffc.experiments import preset, scale_mesh

pytestmark = pytest.mark.filterwarnings("ignore:phase field increased")

COARSE = ["--mesh-scale", "0.25", "--time-steps", "5", "--tol-abs", "1e-6"]


def test_run_writes_artifacts_and_reports_status(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["run", "--experiment", "1", *COARSE, "--out", str(out)])
    captured = capsys.readouterr()
    assert rc == 0
    assert "status: converged" in captured.out
    assert "iterations:" in captured.out
    for name in ("iters.csv", "control.csv", "state_m0005.vtk"):
        assert (out / name).exists()


def test_run_without_an_output_directory_writes_nothing(tmp_path, capsys):
    rc = main(["run", "--experiment", "1", *COARSE])
    assert rc == 0
    assert list(tmp_path.iterdir()) == []


def test_run_accepts_a_configuration_file(tmp_path, capsys):
    path = tmp_path / "bench.cfg"
    write_config(
        str(path),
        dataclasses.replace(
            scale_mesh(preset(1), 0.25), n_steps=5, tol_abs=1e-6
        ),
    )
    rc = main(["run", "--config", str(path)])
    assert rc == 0
    assert "status: converged" in capsys.readouterr().out


def test_run_demands_an_experiment_or_a_config(capsys):
    rc = main(["run"])
    captured = capsys.readouterr()
    assert rc == 1
    assert "provide --experiment or --config" in captured.err


def test_run_maps_the_homotopy_letter_to_a_schedule(tmp_path, capsys):
    path = tmp_path / "bench.cfg"
    write_config(
        str(path),
        dataclasses.replace(
            scale_mesh(preset(1), 0.25),
            n_steps=5,
            homotopy_tikhonov_steps=1,
            tol_abs=1e-6,
        ),
    )
    out = tmp_path / "out"
    rc = main(["run", "--config", str(path), "--homotopy", "b", "--out", str(out)])
    assert rc == 0
    steps = {
        line.split(",")[0].strip()
        for line in (out / "iters.csv").read_text().splitlines()[1:]
    }
    assert steps == {"0", "1"}


def test_mesh_exports_nodal_phase_data(tmp_path, capsys):
    out = tmp_path / "panel.vtk"
    rc = main(["mesh", "--experiment", "5", "--out", str(out)])
    captured = capsys.readouterr()
    assert rc == 0
    assert "19521 vertices, 19200 cells" in captured.out
    text = out.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert "SCALARS initial_phase double 1" in text
    assert "SCALARS desired_phase double 1" in text


def test_mesh_requires_an_experiment(capsys):
    with pytest.raises(SystemExit):
        main(["mesh", "--out", "x.vtk"])


def test_unknown_subcommand_is_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["tesselate"])


def test_check_passes_its_oracles(capsys):
    rc = main(["check"])
    captured = capsys.readouterr()
    assert rc == 0
    assert "all checks passed" in captured.out
    assert captured.out.count("PASS") == 3
    assert "FAIL" not in captured.out


def test_console_script_end_to_end(tmp_path):
    out = tmp_path / "cli"
    proc = subprocess.run(
        [
            "pffc",
            "run",
            "--experiment",
            "1",
            "--mesh-scale",
            "0.125",
            "--time-steps",
            "3",
            "--tol-abs",
            "1e-6",
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "status: converged" in proc.stdout
    assert (out / "iters.csv").exists()


def test_module_invocation_matches_the_script(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pffc.cli", "run"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    assert "provide --experiment or --config" in proc.stderr
