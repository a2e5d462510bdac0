"""Extract command for voromesh CLI."""

import sys
from pathlib import Path
from typing import Annotated

import cyclopts

from voromesh.cli.artifacts import (
    GENERATORS_FILE,
    MANIFEST_FILE,
    Timings,
    read_generators,
    read_manifest,
    write_manifest,
)
from voromesh.cli.config_loader import DEFAULT_OUT, load_config, merge_config_with_defaults
from voromesh.cli.exit_codes import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, exit_on_error
from voromesh.cli.pipeline import extract_stage, prepare_input, print_watertight, write_extraction
from voromesh.errors import ConfigError
from voromesh.optimizer import FitConfig


def run_extract(
    out: Path, input_path: Path | None, threads: int | None, dump_diagram: bool, grid: int | None = None
) -> int:
    """Tag occupancy of the saved generators against the input and extract the surface.

    The manifest always records grid_resolution: the flag, else the fit manifest, else the default.
    """
    manifest = read_manifest(out) if (out / MANIFEST_FILE).exists() else {}
    if input_path is None:
        recorded = manifest.get("input")
        if recorded is None:
            print("Error: input is required when the run directory has no manifest", file=sys.stderr)
            return EXIT_USAGE
        input_path = Path(recorded)

    timings = Timings()
    flags = dict(manifest.get("flags", {}))
    seed = int(flags.get("seed", 0))
    if grid is not None:
        flags["grid_resolution"] = grid
    flags.setdefault("grid_resolution", FitConfig().grid_resolution)

    with timings.stage("load"):
        generators = read_generators(out / GENERATORS_FILE)
        mesh, transform = prepare_input(input_path, seed)
    with timings.stage("extract"):
        extraction = extract_stage(generators, mesh, threads)

    write_extraction(out, extraction, dump_diagram)
    flags["threads"] = threads
    write_manifest(out, "extract", flags, timings, transform.to_dict(), extra={"input": str(input_path.resolve())})
    print_watertight(extraction.report)
    print(f"Artifacts written to {out}")
    return EXIT_OK if extraction.report.watertight else EXIT_VALIDATION


def extract(
    out: Annotated[Path | None, cyclopts.Parameter(help="Run directory containing generators.xyz")] = None,
    input: Annotated[
        Path | None, cyclopts.Parameter(help="Reference mesh for occupancy (defaults to the one recorded by fit)")
    ] = None,
    threads: Annotated[
        int | None, cyclopts.Parameter(help="Worker threads (0 = all cores); falls back to VOROMESH_THREADS")
    ] = None,
    dump_diagram: Annotated[bool | None, cyclopts.Parameter(help="Also write diagram.txt")] = None,
    grid: Annotated[
        int | None, cyclopts.Parameter(help="Grid resolution g_s of the fit (defaults to the manifest, then 32)")
    ] = None,
    config: Annotated[
        Path | None,
        cyclopts.Parameter(help="Path to YAML or JSON configuration file. CLI arguments override config file values."),
    ] = None,
):
    """Build the Voronoi diagram of fitted generators and extract the watertight VoroMesh."""
    file_config = load_config(config) if config else {}
    merged_config = merge_config_with_defaults(
        file_config, {"out": out, "input": input, "threads": threads, "dump_diagram": dump_diagram, "grid": grid}
    )

    with exit_on_error():
        final_threads = merged_config.get("threads")
        if final_threads is not None and int(final_threads) < 0:
            raise ConfigError(f"threads must be >= 0, got {final_threads}")
        final_grid = merged_config.get("grid")
        if final_grid is not None and int(final_grid) < 2:
            raise ConfigError(f"grid must be >= 2, got {final_grid}")
        final_input = merged_config.get("input")
        exit_code = run_extract(
            Path(merged_config.get("out", DEFAULT_OUT)),
            None if final_input is None else Path(final_input),
            None if final_threads is None else int(final_threads),
            bool(merged_config.get("dump_diagram", False)),
            None if final_grid is None else int(final_grid),
        )

    sys.exit(exit_code)
