"""Eval command for voromesh CLI."""

import json
import sys
from pathlib import Path
from typing import Annotated

import cyclopts

from voromesh import metrics
from voromesh.cli.artifacts import METRICS_FILE, write_json
from voromesh.cli.exit_codes import EXIT_OK, EXIT_USAGE, exit_on_error
from voromesh.errors import ConfigError
from voromesh.mesh_io import load_mesh, normalize


def evaluate(
    reconstruction: Annotated[Path, cyclopts.Parameter(help="Reconstructed mesh (OBJ or OFF)")],
    reference: Annotated[Path, cyclopts.Parameter(help="Reference mesh (OBJ or OFF)")],
    n: Annotated[int, cyclopts.Parameter(help="Samples per surface")] = metrics.DEFAULT_METRIC_SAMPLES,
    delta: Annotated[float, cyclopts.Parameter(help="F-score distance threshold")] = metrics.DEFAULT_F1_DELTA,
    seed: Annotated[int, cyclopts.Parameter(help="Sampling seed shared by both surfaces")] = 0,
    normalize_reference: Annotated[
        bool, cyclopts.Parameter(help="Normalize the reference into [-0.5, 0.5]^3 like the pipeline input")
    ] = False,
    csv: Annotated[bool, cyclopts.Parameter(help="Print a CSV header and row instead of JSON")] = False,
    out: Annotated[Path | None, cyclopts.Parameter(help="Directory to write metrics.json into")] = None,
):
    """Compute Chamfer distance, F-score and normal consistency between two meshes."""
    with exit_on_error():
        if n < 1:
            raise ConfigError(f"n must be positive, got {n}")
        if not delta > 0.0:
            raise ConfigError(f"delta must be positive, got {delta}")

        recon_mesh = load_mesh(reconstruction)
        ref_mesh = load_mesh(reference)
        if normalize_reference:
            ref_mesh, _ = normalize(ref_mesh)
        report = metrics.evaluate(recon_mesh, ref_mesh, n=n, delta=delta, seed=seed)

    if csv:
        print(metrics.CSV_HEADER)
        print(report.csv_row())
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))

    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(report.to_dict(), out / METRICS_FILE)
        except OSError as e:
            print(f"Error: cannot write {out / METRICS_FILE}: {e}", file=sys.stderr)
            sys.exit(EXIT_USAGE)

    sys.exit(EXIT_OK)
