"""Run-directory artifacts: generator dumps, JSON reports and the run manifest."""

import json
import platform
import time
from collections.abc import Iterator
from contextlib import contextmanager
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import structlog

import voromesh
from voromesh.errors import InputDataError
from voromesh.voroloss import GeneratorSet


logger = structlog.get_logger()

MESH_FILE = "mesh.obj"
GENERATORS_FILE = "generators.xyz"
LOSS_TRACE_FILE = "loss_trace.csv"
METRICS_FILE = "metrics.json"
WATERTIGHT_FILE = "watertight.json"
MANIFEST_FILE = "manifest.json"
SAMPLES_FILE = "samples.xyz"
DIAGRAM_FILE = "diagram.txt"


def write_generators(generators: GeneratorSet, path: Path | str) -> None:
    """Write generators as 'x y z' or 'x y z occupancy' lines with 17 significant digits."""
    data = generators.positions
    fmt = ["%.17g"] * 3
    if generators.occupancy is not None:
        data = np.hstack([data, generators.occupancy.astype(np.float64)[:, None]])
        fmt.append("%d")
    np.savetxt(Path(path), data, fmt=fmt)


def read_generators(path: Path | str) -> GeneratorSet:
    """Read a generator dump written by write_generators.

    Raises:
        FileNotFoundError: If the file does not exist
        InputDataError: If the file does not have 3 or 4 numeric columns
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Generator file not found: {path}")
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise InputDataError(f"Cannot parse generator file {path}: {e}") from e

    if data.shape[0] == 0 or data.shape[1] not in (3, 4):
        raise InputDataError(f"Expected 3 or 4 columns (x y z [occupancy]) in {path}, found shape {data.shape}")
    occupancy = None
    if data.shape[1] == 4:
        if not np.all(np.isin(data[:, 3], (0.0, 1.0))):
            raise InputDataError(f"Occupancy column of {path} must contain only 0 and 1")
        occupancy = data[:, 3] > 0.5
    return GeneratorSet(data[:, :3], occupancy=occupancy)


def write_json(data: dict[str, Any], path: Path | str) -> None:
    with open(Path(path), "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: Path | str) -> dict[str, Any]:
    """Read a JSON artifact.

    Raises:
        FileNotFoundError: If the file does not exist
        InputDataError: If the content is not a JSON object
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Artifact not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InputDataError(f"Invalid JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise InputDataError(f"Expected a JSON object in {path}")
    return data


class Timings:
    """Wall-clock seconds per named stage."""

    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - started
            logger.debug("stage_finished", stage=name, seconds=self.seconds[name])


def package_versions() -> dict[str, str]:
    try:
        own = version("voromesh")
    except PackageNotFoundError:
        own = voromesh.__version__
    return {"voromesh": own, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(
    out: Path,
    command: str,
    flags: dict[str, Any],
    timings: Timings,
    normalization: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write manifest.json describing how the run directory was produced."""
    manifest = {
        "command": command,
        "flags": flags,
        "versions": package_versions(),
        "timings": dict(timings.seconds),
        "normalization": normalization,
    }
    if extra:
        manifest.update(extra)
    write_json(manifest, out / MANIFEST_FILE)


def read_manifest(out: Path) -> dict[str, Any]:
    return read_json(out / MANIFEST_FILE)
