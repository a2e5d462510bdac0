"""Command-line interface for voromesh."""

import logging
import sys

import cyclopts
import structlog
from dotenv import load_dotenv

from voromesh.cli.evaluate import evaluate
from voromesh.cli.extract import extract
from voromesh.cli.fit import fit
from voromesh.cli.perturb import perturb
from voromesh.cli.pipeline import pipeline
from voromesh.cli.selfcheck import selfcheck


# VOROMESH_THREADS may live in a .env file
load_dotenv()

structlog.configure(
    wrapper_class=structlog.make_filtering_bound_logger(logging.INFO),
    logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
)

app = cyclopts.App(name="voromesh", help="Fit Voronoi generators to a surface and extract a watertight mesh")

# Register commands
app.command(fit, name="fit")
app.command(extract, name="extract")
app.command(pipeline, name="pipeline")
app.command(evaluate, name="eval")
app.command(perturb, name="perturb")
app.command(selfcheck, name="selfcheck")

if __name__ == "__main__":
    app()
