"""Pipeline command for voromesh CLI, plus the stages shared with fit and extract."""

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated

import cyclopts
import numpy as np
import structlog

from voromesh import metrics
from voromesh.cli.artifacts import (
    DIAGRAM_FILE,
    GENERATORS_FILE,
    LOSS_TRACE_FILE,
    MESH_FILE,
    METRICS_FILE,
    SAMPLES_FILE,
    WATERTIGHT_FILE,
    Timings,
    write_generators,
    write_json,
    write_manifest,
)
from voromesh.cli.config_loader import PipelineConfig, build_pipeline_config, load_config, merge_config_with_defaults
from voromesh.cli.exit_codes import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, exit_on_error
from voromesh.errors import InputDataError
from voromesh.extraction import (
    VoroMeshSurface,
    WatertightReport,
    assign_occupancy,
    check_watertight,
    extract_voromesh,
    repair_nonmanifold,
)
from voromesh.mesh_io import NormalizationTransform, TriangleMesh, load_mesh, normalize, save_polygon_mesh
from voromesh.optimizer import FitResult, fit, init_generators, write_loss_trace
from voromesh.sampling import SurfacePointSet, check_input_watertight, sample_surface, write_point_set
from voromesh.voroloss import GeneratorSet
from voromesh.voronoi import VoronoiDiagram, compute_diagram, write_diagram


logger = structlog.get_logger()


@dataclass
class Extraction:
    """Everything produced by one extraction pass."""

    generators: GeneratorSet
    diagram: VoronoiDiagram
    surface: VoroMeshSurface
    report: WatertightReport


def prepare_input(path: Path, seed: int = 0) -> tuple[TriangleMesh, NormalizationTransform]:
    """Load the input mesh, verify it is watertight and normalize it into [-0.5, 0.5]^3.

    Raises:
        FileNotFoundError: If the input does not exist
        InputDataError: If the mesh cannot be parsed or is not watertight
    """
    mesh = load_mesh(path)
    if not check_input_watertight(mesh, seed):
        raise InputDataError(f"Input mesh is not watertight (open edges or non-integral winding number): {path}")
    return normalize(mesh)


def fit_stage(mesh: TriangleMesh, config: PipelineConfig) -> tuple[SurfacePointSet, FitResult]:
    samples = sample_surface(mesh, config.sample_count, config.fit.seed)
    initial = init_generators(samples, config.fit.grid_resolution)
    return samples, fit(samples, initial, config.fit)


def extract_stage(
    generators: GeneratorSet,
    mesh: TriangleMesh | None,
    threads: int | None = 1,
    occupancy: np.ndarray | None = None,
    diagram: VoronoiDiagram | None = None,
) -> Extraction:
    """Diagram, occupancy, surface extraction, repair and validation.

    Occupancy is queried from mesh unless given explicitly; the diagram is
    computed unless given.
    """
    if diagram is None:
        diagram = compute_diagram(generators, threads=threads)
    if occupancy is None:
        if mesh is None:
            raise InputDataError("Occupancy requires either a reference mesh or saved occupancy")
        occupancy = assign_occupancy(diagram, mesh, threads)
    surface = repair_nonmanifold(extract_voromesh(diagram, occupancy))
    report = check_watertight(surface)
    return Extraction(generators.with_occupancy(occupancy), diagram, surface, report)


def write_extraction(out: Path, extraction: Extraction, dump_diagram: bool = False) -> None:
    save_polygon_mesh(extraction.surface, out / MESH_FILE)
    write_generators(extraction.generators, out / GENERATORS_FILE)
    write_json(extraction.report.to_dict(), out / WATERTIGHT_FILE)
    if dump_diagram:
        write_diagram(extraction.diagram, out / DIAGRAM_FILE)


def evaluate_stage(out: Path, extraction: Extraction, reference: TriangleMesh, n: int, delta: float, seed: int) -> None:
    if len(extraction.surface.faces) == 0:
        logger.warning("metrics_skipped_empty_surface")
        return
    report = metrics.evaluate(extraction.surface, reference, n=n, delta=delta, seed=seed)
    write_json(report.to_dict(), out / METRICS_FILE)
    print(f"Chamfer: {report.chamfer:.4f} x 1e-5   F1: {report.f1:.4f}   NC: {report.normal_consistency:.4f}")


def print_watertight(report: WatertightReport) -> None:
    status = "watertight" if report.watertight else "NOT watertight"
    print(
        f"Surface: {report.faces} faces, {report.vertices} vertices, {status} "
        f"(boundary edges {report.boundary_edges}, non-manifold edges {report.nonmanifold_edges}, "
        f"self-intersections {report.self_intersections})"
    )


def run_pipeline(config: PipelineConfig) -> int:
    """Fit, extract, validate and evaluate; returns the process exit code."""
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    timings = Timings()

    with timings.stage("load"):
        mesh, transform = prepare_input(config.input, config.fit.seed)
    print(f"Loaded {config.input}: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")

    with timings.stage("fit"):
        samples, result = fit_stage(mesh, config)
    write_loss_trace(result, out / LOSS_TRACE_FILE)
    if config.dump_samples:
        write_point_set(samples, out / SAMPLES_FILE)
    print(f"Fitted {len(result.generators)} generators to {len(samples)} samples in {config.fit.steps} steps")

    with timings.stage("extract"):
        extraction = extract_stage(result.generators, mesh, config.fit.threads)
    write_extraction(out, extraction, config.dump_diagram)
    print_watertight(extraction.report)

    with timings.stage("metrics"):
        evaluate_stage(out, extraction, mesh, config.metric_samples, config.delta, config.evaluation_seed)

    write_manifest(
        out,
        "pipeline",
        config.to_dict(),
        timings,
        transform.to_dict(),
        extra={"input": str(Path(config.input).resolve())},
    )
    print(f"Artifacts written to {out}")
    return EXIT_OK if extraction.report.watertight else EXIT_VALIDATION


def pipeline(
    input: Annotated[Path | None, cyclopts.Parameter(help="Watertight input mesh (OBJ or OFF)")] = None,
    out: Annotated[Path | None, cyclopts.Parameter(help="Run directory for all artifacts")] = None,
    grid: Annotated[int | None, cyclopts.Parameter(help="Grid resolution g_s of the initial generators")] = None,
    samples: Annotated[int | None, cyclopts.Parameter(help="Surface sample count (default 150 * grid^2)")] = None,
    steps: Annotated[int | None, cyclopts.Parameter(help="Adam steps")] = None,
    lr: Annotated[float | None, cyclopts.Parameter(help="Initial learning rate")] = None,
    halving_steps: Annotated[
        str | None, cyclopts.Parameter(help="Steps at which the learning rate halves, e.g. '80,120,200,250'")
    ] = None,
    minibatch: Annotated[float | None, cyclopts.Parameter(help="Minibatch fraction of the samples per step")] = None,
    k: Annotated[int | None, cyclopts.Parameter(help="Nearest generators considered per sample")] = None,
    lambda_: Annotated[
        float | None, cyclopts.Parameter(name="--lambda", help="Weight of the maximum-offset regularizer")
    ] = None,
    seed: Annotated[int | None, cyclopts.Parameter(help="Seed for sampling, minibatches and metrics")] = None,
    threads: Annotated[
        int | None, cyclopts.Parameter(help="Worker threads (0 = all cores); falls back to VOROMESH_THREADS")
    ] = None,
    metric_samples: Annotated[int | None, cyclopts.Parameter(help="Samples per surface for the metrics")] = None,
    delta: Annotated[float | None, cyclopts.Parameter(help="F-score distance threshold")] = None,
    dump_samples: Annotated[bool | None, cyclopts.Parameter(help="Also write samples.xyz")] = None,
    dump_diagram: Annotated[bool | None, cyclopts.Parameter(help="Also write diagram.txt")] = None,
    config: Annotated[
        Path | None,
        cyclopts.Parameter(help="Path to YAML or JSON configuration file. CLI arguments override config file values."),
    ] = None,
):
    """Fit generators to a mesh, extract the watertight surface and evaluate it."""
    file_config = load_config(config) if config else {}

    cli_values = {
        "input": input,
        "out": out,
        "grid": grid,
        "samples": samples,
        "steps": steps,
        "lr": lr,
        "halving_steps": halving_steps,
        "minibatch": minibatch,
        "k": k,
        "lambda": lambda_,
        "seed": seed,
        "threads": threads,
        "metric_samples": metric_samples,
        "delta": delta,
        "dump_samples": dump_samples,
        "dump_diagram": dump_diagram,
    }
    merged_config = merge_config_with_defaults(file_config, cli_values)

    with exit_on_error():
        pipeline_config = build_pipeline_config(merged_config)
        if pipeline_config.input is None:
            print("Error: input is required (positional argument or 'input' in config file)", file=sys.stderr)
            sys.exit(EXIT_USAGE)
        exit_code = run_pipeline(pipeline_config)

    sys.exit(exit_code)
