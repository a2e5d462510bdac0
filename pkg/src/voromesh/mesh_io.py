"""Load, normalize and save triangle and polygon meshes.

Supported formats are ASCII OBJ (``v``/``f`` records, 1-based indices, negative
relative indices) and ASCII OFF. Polygon faces are fan-triangulated on load.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog
import trimesh

from voromesh.errors import DegenerateGeometryError, InputDataError, MeshParseError


logger = structlog.get_logger()

# Faces with twice-area below this are flagged as zero-area in the load report.
ZERO_AREA_EPS = 1e-14


@dataclass
class LoadReport:
    """Summary of fixes applied while loading a mesh."""

    degenerate_faces: int = 0
    zero_area_faces: int = 0
    polygons_triangulated: int = 0


@dataclass
class TriangleMesh:
    """Triangle mesh with float64 vertices (V, 3) and int64 faces (F, 3)."""

    vertices: np.ndarray
    faces: np.ndarray
    report: LoadReport = field(default_factory=LoadReport)

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def triangles(self) -> np.ndarray:
        """Corner coordinates per face, shape (F, 3, 3)."""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        """Unnormalized face normals (twice the area vector)."""
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero-area faces get a zero vector."""
        cross = self.face_cross()
        norms = np.linalg.norm(cross, axis=1, keepdims=True)
        safe = np.where(norms > 0.0, norms, 1.0)
        return np.where(norms > 0.0, cross / safe, 0.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class PolygonMesh:
    """Mesh with variable-length polygon faces given as vertex index loops."""

    vertices: np.ndarray
    faces: list[list[int]]

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = [[int(i) for i in face] for face in self.faces]

    def triangulate(self) -> TriangleMesh:
        """Fan-triangulate every polygon from its first vertex."""
        triangles = [
            (face[0], face[k], face[k + 1]) for face in self.faces for k in range(1, len(face) - 1)
        ]
        return TriangleMesh(self.vertices.copy(), np.array(triangles, dtype=np.int64).reshape(-1, 3))


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps original coordinates p to scale * (p + translation)."""

    scale: float
    translation: tuple[float, float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) + np.asarray(self.translation))

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale - np.asarray(self.translation)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "translation": list(self.translation)}


def as_triangle_mesh(mesh: TriangleMesh | PolygonMesh) -> TriangleMesh:
    """Return a TriangleMesh view of either mesh type."""
    if isinstance(mesh, TriangleMesh):
        return mesh
    return mesh.triangulate()


def _resolve_obj_index(token: str, vertex_count: int, path: Path, line_number: int) -> int:
    raw = token.split("/", 1)[0]
    try:
        index = int(raw)
    except ValueError as e:
        raise MeshParseError(f"invalid face index '{token}'", path, line_number) from e

    if index > 0:
        resolved = index - 1
    elif index < 0:
        resolved = vertex_count + index
    else:
        raise MeshParseError("face index 0 is not valid in OBJ", path, line_number)

    if not 0 <= resolved < vertex_count:
        raise MeshParseError(
            f"face index {index} out of range for {vertex_count} vertices", path, line_number
        )
    return resolved


def _parse_obj(path: Path, text: str) -> tuple[list[list[float]], list[list[int]]]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []

    for line_number, line in enumerate(text.splitlines(), start=1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue

        record = parts[0]
        if record == "v":
            if len(parts) < 4:
                raise MeshParseError("vertex record needs 3 coordinates", path, line_number)
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as e:
                raise MeshParseError(f"invalid vertex coordinate in '{line.strip()}'", path, line_number) from e
        elif record == "f":
            if len(parts) < 4:
                raise MeshParseError("face record needs at least 3 indices", path, line_number)
            faces.append([_resolve_obj_index(token, len(vertices), path, line_number) for token in parts[1:]])

    return vertices, faces


def _parse_off(path: Path, text: str) -> tuple[list[list[float]], list[list[int]]]:
    # Keep original line numbers for error messages
    records = [
        (line_number, line.split("#", 1)[0].split())
        for line_number, line in enumerate(text.splitlines(), start=1)
    ]
    records = [(n, parts) for n, parts in records if parts]
    if not records or not records[0][1][0].upper().endswith("OFF"):
        line_number = records[0][0] if records else 1
        raise MeshParseError("missing OFF header", path, line_number)

    header_line, header = records[0]
    cursor = 1
    counts = header[1:]
    if not counts:
        if len(records) < 2:
            raise MeshParseError("missing OFF element counts", path, header_line)
        header_line, counts = records[1]
        cursor = 2

    try:
        vertex_count, face_count = int(counts[0]), int(counts[1])
    except (ValueError, IndexError) as e:
        raise MeshParseError("invalid OFF element counts", path, header_line) from e

    if len(records) < cursor + vertex_count + face_count:
        raise MeshParseError(
            f"expected {vertex_count} vertices and {face_count} faces, file is truncated",
            path,
            records[-1][0],
        )

    vertices: list[list[float]] = []
    for line_number, parts in records[cursor : cursor + vertex_count]:
        try:
            vertices.append([float(x) for x in parts[:3]])
        except ValueError as e:
            raise MeshParseError("invalid vertex coordinate", path, line_number) from e
        if len(parts) < 3:
            raise MeshParseError("vertex record needs 3 coordinates", path, line_number)

    faces: list[list[int]] = []
    for line_number, parts in records[cursor + vertex_count : cursor + vertex_count + face_count]:
        try:
            n = int(parts[0])
            indices = [int(x) for x in parts[1 : 1 + n]]
        except ValueError as e:
            raise MeshParseError("invalid face record", path, line_number) from e
        if n < 3 or len(indices) != n:
            raise MeshParseError(f"face record declares {n} indices, found {len(indices)}", path, line_number)
        for index in indices:
            if not 0 <= index < vertex_count:
                raise MeshParseError(
                    f"face index {index} out of range for {vertex_count} vertices", path, line_number
                )
        faces.append(indices)

    return vertices, faces


def _build_triangle_mesh(vertices: list[list[float]], polygons: list[list[int]]) -> TriangleMesh:
    report = LoadReport()
    triangles: list[tuple[int, int, int]] = []

    for polygon in polygons:
        if len(polygon) > 3:
            report.polygons_triangulated += 1
        for k in range(1, len(polygon) - 1):
            tri = (polygon[0], polygon[k], polygon[k + 1])
            if len(set(tri)) < 3:
                report.degenerate_faces += 1
                continue
            triangles.append(tri)

    mesh = TriangleMesh(np.array(vertices, dtype=np.float64), np.array(triangles, dtype=np.int64), report)
    if len(mesh.faces):
        report.zero_area_faces = int(np.count_nonzero(np.linalg.norm(mesh.face_cross(), axis=1) <= ZERO_AREA_EPS))
    return mesh


def load_mesh(path: Path | str) -> TriangleMesh:
    """Load an ASCII OBJ or OFF file as a triangle mesh.

    Polygons with more than three vertices are fan-triangulated. Faces with a
    repeated index are dropped and counted in the load report; zero-area faces
    are kept and flagged.

    Args:
        path: Path to a .obj or .off file

    Returns:
        TriangleMesh with an attached LoadReport

    Raises:
        FileNotFoundError: If the file does not exist
        MeshParseError: On malformed records, naming the line
        InputDataError: If the mesh has no vertices or no faces
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Mesh file not found: {path}")

    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, polygons = _parse_obj(path, text)
    elif suffix == ".off":
        vertices, polygons = _parse_off(path, text)
    else:
        raise InputDataError(f"Unsupported mesh format '{path.suffix}' (expected .obj or .off): {path}")

    mesh = _build_triangle_mesh(vertices, polygons)
    if len(mesh.vertices) == 0 or len(mesh.faces) == 0:
        raise InputDataError(f"Mesh is empty: {path}")

    if mesh.report.degenerate_faces or mesh.report.zero_area_faces:
        logger.warning(
            "mesh_degenerate_faces",
            path=str(path),
            dropped=mesh.report.degenerate_faces,
            zero_area=mesh.report.zero_area_faces,
        )
    logger.debug("mesh_loaded", path=str(path), vertices=len(mesh.vertices), faces=len(mesh.faces))
    return mesh


def normalize(mesh: TriangleMesh) -> tuple[TriangleMesh, NormalizationTransform]:
    """Center the bounding box at the origin and scale its longest side to 1.

    Raises:
        InputDataError: If the mesh has no vertices
        DegenerateGeometryError: If all vertices coincide
    """
    if len(mesh.vertices) == 0:
        raise InputDataError("Cannot normalize an empty mesh")

    lo, hi = mesh.bounds()
    extent = float(np.max(hi - lo))
    if not extent > 0.0:
        raise DegenerateGeometryError("Cannot normalize a zero-extent mesh (all vertices identical)")

    center = 0.5 * (lo + hi)
    transform = NormalizationTransform(scale=1.0 / extent, translation=tuple(float(c) for c in -center))
    normalized = TriangleMesh(transform.apply(mesh.vertices), mesh.faces.copy(), mesh.report)
    return normalized, transform


def _format_vertex(v: np.ndarray) -> str:
    return f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n"


def save_polygon_mesh(mesh: PolygonMesh | TriangleMesh, path: Path | str) -> None:
    """Write a mesh as OBJ with polygonal faces (1-based indices).

    Raises:
        InputDataError: If a face references a missing vertex
        OSError: If the file cannot be written
    """
    path = Path(path)
    faces = mesh.faces.tolist() if isinstance(mesh, TriangleMesh) else mesh.faces
    vertex_count = len(mesh.vertices)

    lines = [_format_vertex(v) for v in mesh.vertices]
    for face in faces:
        if any(not 0 <= i < vertex_count for i in face):
            raise InputDataError(f"Face {face} references a vertex outside [0, {vertex_count})")
        lines.append("f " + " ".join(str(i + 1) for i in face) + "\n")

    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)

    logger.debug("mesh_saved", path=str(path), vertices=vertex_count, faces=len(faces))


def save_triangle_mesh(mesh: TriangleMesh, path: Path | str) -> None:
    """Write a triangle mesh (e.g. a normalized reference shape) as OBJ.

    Raises:
        OSError: If the file cannot be written
    """
    path = Path(path)
    exported = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False)
    exported.export(str(path), file_type="obj", include_normals=False)
    logger.debug("mesh_saved", path=str(path), vertices=len(mesh.vertices), faces=len(mesh.faces))
