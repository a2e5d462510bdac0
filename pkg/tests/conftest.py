"""Shared fixtures for the command tests."""

import logging
import sys
from pathlib import Path

import pytest
import structlog

from voromesh.mesh_io import save_triangle_mesh
from voromesh.shapes import icosphere


# Keep stdout for command output only
structlog.configure(
    wrapper_class=structlog.make_filtering_bound_logger(logging.INFO),
    logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
)

RUN_FLAGS = {"grid": 6, "steps": 5, "metric_samples": 2000}


@pytest.fixture
def sphere_obj(tmp_path: Path) -> Path:
    path = tmp_path / "sphere.obj"
    save_triangle_mesh(icosphere(2), path)
    return path


@pytest.fixture(scope="session")
def finished_run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Run directory of a small pipeline run on an icosphere."""
    from voromesh.cli.pipeline import pipeline

    root = tmp_path_factory.mktemp("finished")
    mesh_path = root / "sphere.obj"
    save_triangle_mesh(icosphere(2), mesh_path)
    out = root / "run"

    with pytest.raises(SystemExit) as exc_info:
        pipeline(input=mesh_path, out=out, **RUN_FLAGS)
    assert exc_info.value.code == 0
    return out
