"""Perturb command for voromesh CLI."""

import sys
from pathlib import Path
from typing import Annotated

import cyclopts
import structlog

from voromesh import metrics
from voromesh.cli.artifacts import (
    GENERATORS_FILE,
    METRICS_FILE,
    Timings,
    read_generators,
    read_manifest,
    write_json,
    write_manifest,
)
from voromesh.cli.config_loader import DEFAULT_OUT
from voromesh.cli.exit_codes import EXIT_OK, EXIT_VALIDATION, exit_on_error
from voromesh.cli.pipeline import Extraction, extract_stage, print_watertight, write_extraction
from voromesh.errors import ConfigError, InputDataError
from voromesh.extraction import force_clipped_outside, perturb_generators
from voromesh.mesh_io import load_mesh, normalize
from voromesh.voronoi import compute_diagram


logger = structlog.get_logger()


def perturbed_extraction(run: Path, delta_percent: float, seed: int, threads: int | None) -> tuple[Extraction, dict]:
    """Perturb the saved generators of a run and re-extract with their saved occupancy.

    Raises:
        InputDataError: If the saved generators carry no occupancy or the grid resolution is unknown
    """
    manifest = read_manifest(run)
    generators = read_generators(run / GENERATORS_FILE)
    if generators.occupancy is None:
        raise InputDataError(f"{run / GENERATORS_FILE} has no occupancy column; run extract first")

    grid = manifest.get("flags", {}).get("grid_resolution")
    if grid is None:
        raise InputDataError(f"Manifest in {run} does not record grid_resolution")

    perturbed = perturb_generators(generators, delta_percent, int(grid), seed)
    diagram = compute_diagram(perturbed, threads=threads)
    occupancy = force_clipped_outside(diagram, perturbed.occupancy)
    return extract_stage(perturbed, None, threads, occupancy=occupancy, diagram=diagram), manifest


def perturb(
    delta: Annotated[float, cyclopts.Parameter(help="Noise magnitude in percent of the voxel size 1/g_s")],
    out: Annotated[Path | None, cyclopts.Parameter(help="Run directory of a finished pipeline or extract")] = None,
    seed: Annotated[int, cyclopts.Parameter(help="Noise seed")] = 0,
    threads: Annotated[
        int | None, cyclopts.Parameter(help="Worker threads (0 = all cores); falls back to VOROMESH_THREADS")
    ] = None,
    metric_samples: Annotated[
        int | None, cyclopts.Parameter(help="Samples per surface for the metrics (defaults to the run setting)")
    ] = None,
):
    """Add uniform noise to fitted generators, keep their occupancy and re-extract."""
    run = out or DEFAULT_OUT
    target = run / f"perturb_{delta:g}"

    with exit_on_error():
        if delta < 0.0:
            raise ConfigError(f"delta must be nonnegative, got {delta}")
        if threads is not None and threads < 0:
            raise ConfigError(f"threads must be >= 0, got {threads}")
        if metric_samples is not None and metric_samples < 1:
            raise ConfigError(f"metric_samples must be positive, got {metric_samples}")

        timings = Timings()
        with timings.stage("extract"):
            extraction, manifest = perturbed_extraction(run, delta, seed, threads)
        target.mkdir(parents=True, exist_ok=True)
        write_extraction(target, extraction)
        print_watertight(extraction.report)

        input_path = manifest.get("input")
        if input_path is not None and Path(input_path).exists() and len(extraction.surface.faces) > 0:
            with timings.stage("metrics"):
                reference, _ = normalize(load_mesh(input_path))
                run_flags = manifest.get("flags", {})
                report = metrics.evaluate(
                    extraction.surface,
                    reference,
                    n=metric_samples or int(run_flags.get("metric_samples", metrics.DEFAULT_METRIC_SAMPLES)),
                    delta=float(run_flags.get("delta", metrics.DEFAULT_F1_DELTA)),
                    seed=int(run_flags.get("metric_seed", run_flags.get("seed", 0))),
                )
            write_json(report.to_dict(), target / METRICS_FILE)
            print(f"Chamfer: {report.chamfer:.4f} x 1e-5   F1: {report.f1:.4f}   NC: {report.normal_consistency:.4f}")
        else:
            logger.warning("perturb_metrics_skipped", input=input_path)

        flags = dict(manifest.get("flags", {}))
        flags.update({"delta_percent": delta, "perturb_seed": seed, "threads": threads})
        write_manifest(target, "perturb", flags, timings, manifest.get("normalization"), extra={"input": input_path})

    print(f"Artifacts written to {target}")
    sys.exit(EXIT_OK if extraction.report.watertight else EXIT_VALIDATION)
