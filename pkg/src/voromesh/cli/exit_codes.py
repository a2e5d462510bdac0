"""Process exit codes and the error-to-exit-code mapping shared by all commands."""

import sys
from collections.abc import Iterator
from contextlib import contextmanager

import structlog

from voromesh.errors import ConfigError, DegenerateGeometryError, InputDataError, OptimizationError


logger = structlog.get_logger()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_VALIDATION = 3


@contextmanager
def exit_on_error() -> Iterator[None]:
    """Print library errors to stderr and exit with the matching code.

    Raises:
        SystemExit: 1 for invalid options, 2 for bad input data, 3 for optimization failures
    """
    try:
        yield
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except (InputDataError, DegenerateGeometryError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT)
    except OptimizationError as e:
        logger.error("optimization_failed", error=str(e))
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
