"""Selfcheck command for voromesh CLI."""

import sys
from pathlib import Path
from typing import Annotated

import cyclopts

from voromesh.cli.artifacts import write_json
from voromesh.cli.exit_codes import EXIT_OK, EXIT_VALIDATION
from voromesh.selfcheck import run_selfcheck


def selfcheck(
    seed: Annotated[int, cyclopts.Parameter(help="Seed for every randomized check")] = 0,
    smoke: Annotated[bool, cyclopts.Parameter(help="Include the end-to-end icosphere run")] = True,
    out: Annotated[Path | None, cyclopts.Parameter(help="Write selfcheck.json into this directory")] = None,
):
    """Run the loss, gradient, diagram and watertightness checks; exit 0 only if all pass."""
    report = run_selfcheck(seed, smoke=smoke)

    for result in report.results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name:<22} {result.detail} ({result.seconds:.1f}s)")

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(report.to_dict(), out / "selfcheck.json")

    if not report.passed:
        print("Self-check failed", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    sys.exit(EXIT_OK)
