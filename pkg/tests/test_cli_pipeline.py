"""Tests for voromesh.cli.pipeline command."""

import json
from pathlib import Path

import numpy as np
import pytest

from voromesh.cli.artifacts import read_generators, read_manifest
from voromesh.cli.pipeline import pipeline
from voromesh.mesh_io import TriangleMesh, load_mesh, save_triangle_mesh
from voromesh.shapes import box

from .conftest import RUN_FLAGS


class TestCLIPipeline:
    """Tests for CLI pipeline command."""

    def test_artifacts_written(self, finished_run: Path) -> None:
        """Test that a finished run holds every artifact."""
        names = ("mesh.obj", "generators.xyz", "loss_trace.csv", "metrics.json", "watertight.json", "manifest.json")
        for name in names:
            assert (finished_run / name).exists(), name

    def test_generators_carry_occupancy(self, finished_run: Path) -> None:
        generators = read_generators(finished_run / "generators.xyz")
        assert generators.occupancy is not None
        assert generators.occupancy.any()
        assert not generators.occupancy.all()

    def test_loss_trace_rows(self, finished_run: Path) -> None:
        """Test one row per step plus the final full-loss row."""
        lines = (finished_run / "loss_trace.csv").read_text().splitlines()
        assert lines[0] == "step,lr,minibatch_loss,full_loss"
        assert len(lines) == 1 + RUN_FLAGS["steps"] + 1

    def test_reports(self, finished_run: Path) -> None:
        watertight = json.loads((finished_run / "watertight.json").read_text())
        metrics = json.loads((finished_run / "metrics.json").read_text())

        assert watertight["watertight"] is True
        assert metrics["n_samples"] == RUN_FLAGS["metric_samples"]
        assert 0.0 <= metrics["f1"] <= 1.0

    def test_manifest(self, finished_run: Path) -> None:
        manifest = read_manifest(finished_run)

        assert manifest["command"] == "pipeline"
        assert manifest["flags"]["grid_resolution"] == RUN_FLAGS["grid"]
        assert manifest["flags"]["steps"] == RUN_FLAGS["steps"]
        assert manifest["normalization"]["scale"] > 0.0
        assert Path(manifest["input"]).name == "sphere.obj"

    def test_mesh_is_closed(self, finished_run: Path) -> None:
        """Test that every edge of the written surface is shared by exactly two faces."""
        mesh = load_mesh(finished_run / "mesh.obj")
        edges: dict[tuple[int, int], int] = {}
        for a, b, c in mesh.faces:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                edges[key] = edges.get(key, 0) + 1
        assert set(edges.values()) == {2}

    def test_zero_steps(self, tmp_path: Path, sphere_obj: Path) -> None:
        """Test that extraction from the initial lattice succeeds."""
        out = tmp_path / "run"
        with pytest.raises(SystemExit) as exc_info:
            pipeline(input=sphere_obj, out=out, grid=4, steps=0, metric_samples=1000)

        assert exc_info.value.code == 0
        assert (out / "loss_trace.csv").read_text().splitlines() == ["step,lr,minibatch_loss,full_loss"]

    def test_dump_options(self, tmp_path: Path, sphere_obj: Path) -> None:
        out = tmp_path / "run"
        with pytest.raises(SystemExit):
            pipeline(
                input=sphere_obj, out=out, grid=4, steps=0, metric_samples=1000, dump_samples=True, dump_diagram=True
            )

        assert len((out / "samples.xyz").read_text().splitlines()) == 150 * 4**2
        assert (out / "diagram.txt").read_text().startswith("# voronoi diagram")

    def test_config_file(self, tmp_path: Path, sphere_obj: Path) -> None:
        """Test that a config file supplies values and flags override them."""
        config_file = tmp_path / "config.yaml"
        config_file.write_text(
            f"input: {sphere_obj}\nout: {tmp_path / 'from_file'}\ngrid: 4\nsteps: 0\nmetric_samples: 500\n"
        )

        with pytest.raises(SystemExit) as exc_info:
            pipeline(out=tmp_path / "from_flag", config=config_file)

        assert exc_info.value.code == 0
        assert (tmp_path / "from_flag" / "mesh.obj").exists()
        assert not (tmp_path / "from_file").exists()
        assert read_manifest(tmp_path / "from_flag")["flags"]["grid_resolution"] == 4

    def test_missing_input(self, tmp_path: Path) -> None:
        with pytest.raises(SystemExit) as exc_info:
            pipeline(out=tmp_path / "run")
        assert exc_info.value.code == 1

    def test_nonexistent_input(self, tmp_path: Path) -> None:
        with pytest.raises(SystemExit) as exc_info:
            pipeline(input=tmp_path / "missing.obj", out=tmp_path / "run")
        assert exc_info.value.code == 2

    def test_open_input_rejected(self, tmp_path: Path) -> None:
        """Test that a mesh with a hole is rejected as input data."""
        mesh = box()
        path = tmp_path / "open.obj"
        save_triangle_mesh(TriangleMesh(mesh.vertices, mesh.faces[2:]), path)

        with pytest.raises(SystemExit) as exc_info:
            pipeline(input=path, out=tmp_path / "run", grid=4, steps=0)
        assert exc_info.value.code == 2

    def test_invalid_grid(self, tmp_path: Path, sphere_obj: Path) -> None:
        with pytest.raises(SystemExit) as exc_info:
            pipeline(input=sphere_obj, out=tmp_path / "run", grid=1)
        assert exc_info.value.code == 1

    def test_seeded_runs_are_identical(self, tmp_path: Path, sphere_obj: Path) -> None:
        """Test that the same flags produce bit-identical generators."""
        for name in ("a", "b"):
            with pytest.raises(SystemExit):
                pipeline(input=sphere_obj, out=tmp_path / name, grid=4, steps=3, metric_samples=500, seed=2)

        first = read_generators(tmp_path / "a" / "generators.xyz")
        second = read_generators(tmp_path / "b" / "generators.xyz")
        assert np.array_equal(first.positions, second.positions)
