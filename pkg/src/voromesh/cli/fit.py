"""Fit command for voromesh CLI."""

import sys
from pathlib import Path
from typing import Annotated

import cyclopts

from voromesh.cli.artifacts import (
    GENERATORS_FILE,
    LOSS_TRACE_FILE,
    SAMPLES_FILE,
    Timings,
    write_generators,
    write_manifest,
)
from voromesh.cli.config_loader import PipelineConfig, build_pipeline_config, load_config, merge_config_with_defaults
from voromesh.cli.exit_codes import EXIT_OK, EXIT_USAGE, exit_on_error
from voromesh.cli.pipeline import fit_stage, prepare_input
from voromesh.optimizer import write_loss_trace
from voromesh.sampling import write_point_set


def run_fit(config: PipelineConfig) -> int:
    """Fit generators and write generators.xyz, loss_trace.csv and the manifest."""
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    timings = Timings()

    with timings.stage("load"):
        mesh, transform = prepare_input(config.input, config.fit.seed)
    with timings.stage("fit"):
        samples, result = fit_stage(mesh, config)

    write_generators(result.generators, out / GENERATORS_FILE)
    write_loss_trace(result, out / LOSS_TRACE_FILE)
    if config.dump_samples:
        write_point_set(samples, out / SAMPLES_FILE)
    write_manifest(
        out,
        "fit",
        config.to_dict(),
        timings,
        transform.to_dict(),
        extra={"input": str(Path(config.input).resolve())},
    )

    final = result.full_losses().get(config.fit.steps)
    loss_text = f", final full loss {final:.6g}" if final is not None else ""
    print(f"Fitted {len(result.generators)} generators in {config.fit.steps} steps{loss_text}")
    print(f"Artifacts written to {out}")
    return EXIT_OK


def fit(
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
    seed: Annotated[int | None, cyclopts.Parameter(help="Seed for sampling and minibatches")] = None,
    threads: Annotated[
        int | None, cyclopts.Parameter(help="Worker threads (0 = all cores); falls back to VOROMESH_THREADS")
    ] = None,
    dump_samples: Annotated[bool | None, cyclopts.Parameter(help="Also write samples.xyz")] = None,
    config: Annotated[
        Path | None,
        cyclopts.Parameter(help="Path to YAML or JSON configuration file. CLI arguments override config file values."),
    ] = None,
):
    """Fit Voronoi generators to the surface of a mesh with the VoroLoss."""
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
        "dump_samples": dump_samples,
    }
    merged_config = merge_config_with_defaults(file_config, cli_values)

    with exit_on_error():
        fit_config = build_pipeline_config(merged_config)
        if fit_config.input is None:
            print("Error: input is required (positional argument or 'input' in config file)", file=sys.stderr)
            sys.exit(EXIT_USAGE)
        exit_code = run_fit(fit_config)

    sys.exit(exit_code)
