"""Exception hierarchy for voromesh."""

from pathlib import Path


class VoroMeshError(Exception):
    """Base class for all voromesh errors."""


class InputDataError(VoroMeshError, ValueError):
    """Input data is unreadable or violates a precondition."""


class MeshParseError(InputDataError):
    """A mesh file could not be parsed.

    Args:
        message: Description of the problem
        path: File being parsed
        line: 1-based line number of the offending record, if known
    """

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        self.path = Path(path) if path is not None else None
        self.line = line
        location = ""
        if self.path is not None:
            location = f"{self.path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        elif line is not None:
            location = f"line {line}: "
        super().__init__(f"{location}{message}")


class DegenerateGeometryError(VoroMeshError, ValueError):
    """Geometry is degenerate (coincident generators, zero extent, zero area)."""


class OptimizationError(VoroMeshError, RuntimeError):
    """The optimization produced a non-finite loss or gradient."""


class ConfigError(VoroMeshError, ValueError):
    """A configuration value or command-line flag is invalid."""
