"""Area-weighted surface sampling and winding-number occupancy queries."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
import trimesh

from voromesh.errors import DegenerateGeometryError, InputDataError
from voromesh.mesh_io import TriangleMesh
from voromesh.utils import chunk_ranges, parallel_map, resolve_threads


logger = structlog.get_logger()

SAMPLES_PER_CELL_FACE = 150
# Upper bound on (points x faces) entries evaluated at once by the winding number.
WINDING_CHUNK_ENTRIES = 400_000


@dataclass
class SurfacePointSet:
    """Surface samples with flat source-triangle normals and source face ids."""

    points: np.ndarray
    normals: np.ndarray
    face_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, indices: np.ndarray) -> "SurfacePointSet":
        return SurfacePointSet(self.points[indices], self.normals[indices], self.face_ids[indices])


def default_sample_count(grid_resolution: int) -> int:
    """Number of surface samples used for a g_s^3 grid (150 * g_s^2)."""
    return SAMPLES_PER_CELL_FACE * grid_resolution * grid_resolution


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> SurfacePointSet:
    """Draw `count` area-weighted uniform samples from the mesh surface.

    Triangles are selected with probability proportional to area and points are
    uniform in barycentric coordinates. Identical (mesh, count, seed) give
    bit-identical output.

    Raises:
        InputDataError: If count is not positive
        DegenerateGeometryError: If the total surface area is zero
    """
    if count <= 0:
        raise InputDataError(f"Sample count must be positive, got {count}")
    if len(mesh.faces) == 0:
        raise DegenerateGeometryError("Cannot sample a mesh without faces")

    areas = mesh.face_areas()
    area_sum = float(np.sum(areas))
    if not area_sum > 0.0:
        raise DegenerateGeometryError("Cannot sample a mesh with zero total area")

    rng = np.random.default_rng(seed)
    area_cum = np.cumsum(areas)
    # side="right" never lands on a zero-area face
    face_ids = np.searchsorted(area_cum, rng.random(count) * area_sum, side="right")
    face_ids = np.minimum(face_ids, len(areas) - 1)

    uv = rng.random((count, 2))
    flip = uv.sum(axis=1) > 1.0
    uv[flip] = 1.0 - uv[flip]

    tri = mesh.triangles[face_ids]
    points = tri[:, 0] + uv[:, :1] * (tri[:, 1] - tri[:, 0]) + uv[:, 1:] * (tri[:, 2] - tri[:, 0])
    normals = mesh.face_normals()[face_ids]
    return SurfacePointSet(points=points, normals=normals, face_ids=face_ids.astype(np.int64))


def _solid_angle_sum(triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Summed signed solid angle of all triangles seen from each point."""
    a = triangles[None, :, 0, :] - points[:, None, :]
    b = triangles[None, :, 1, :] - points[:, None, :]
    c = triangles[None, :, 2, :] - points[:, None, :]

    la = np.linalg.norm(a, axis=-1)
    lb = np.linalg.norm(b, axis=-1)
    lc = np.linalg.norm(c, axis=-1)

    numerator = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
    denominator = (
        la * lb * lc
        + np.einsum("pfi,pfi->pf", a, b) * lc
        + np.einsum("pfi,pfi->pf", b, c) * la
        + np.einsum("pfi,pfi->pf", c, a) * lb
    )
    return 2.0 * np.arctan2(numerator, denominator).sum(axis=1)


def winding_number(mesh: TriangleMesh, points: np.ndarray, threads: int | None = 1) -> np.ndarray:
    """Exact generalized winding number of the mesh around each point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0, dtype=np.float64)

    triangles = mesh.triangles
    chunk = max(1, WINDING_CHUNK_ENTRIES // max(1, len(triangles)))
    ranges = chunk_ranges(len(points), chunk)
    parts = parallel_map(
        lambda r: _solid_angle_sum(triangles, points[r[0] : r[1]]), ranges, resolve_threads(threads)
    )
    return np.concatenate(parts) / (4.0 * np.pi)


def batch_occupancy(mesh: TriangleMesh, points: np.ndarray, threads: int | None = 1) -> np.ndarray:
    """Inside flags (winding number > 0.5) for each query point, in input order.

    Points exactly on the surface have winding 0.5 and are classified outside.
    """
    return winding_number(mesh, points, threads) > 0.5


def point_occupancy(mesh: TriangleMesh, p: np.ndarray) -> bool:
    """True if p is inside the watertight mesh."""
    return bool(batch_occupancy(mesh, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def _ray_crossings(triangles: np.ndarray, origin: np.ndarray, direction: np.ndarray, eps: float = 1e-12) -> int:
    """Count triangles hit by the ray origin + t * direction, t > 0 (Moller-Trumbore)."""
    v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    edge1 = v1 - v0
    edge2 = v2 - v0
    h = np.cross(direction, edge2)
    det = np.einsum("fi,fi->f", edge1, h)
    valid = np.abs(det) > eps
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)

    s = origin - v0
    u = inv * np.einsum("fi,fi->f", s, h)
    q = np.cross(s, edge1)
    v = inv * (q @ direction)
    t = inv * np.einsum("fi,fi->f", edge2, q)
    hit = valid & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > eps)
    return int(np.count_nonzero(hit))


def ray_parity_occupancy(mesh: TriangleMesh, points: np.ndarray, seed: int = 0) -> np.ndarray:
    """Inside flags by ray-crossing parity, majority vote over 3 random rays.

    Independent of the winding-number path; used as an oracle.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    triangles = mesh.triangles
    result = np.zeros(len(points), dtype=bool)

    for n, p in enumerate(points):
        directions = rng.normal(size=(3, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        votes = sum(_ray_crossings(triangles, p, d) % 2 for d in directions)
        result[n] = votes >= 2
    return result


def edge_face_counts(faces: np.ndarray | list[list[int]]) -> dict[tuple[int, int], int]:
    """Number of faces incident to each undirected edge."""
    edges = [(a, b) for face in faces for a, b in zip(list(face), list(face[1:]) + list(face[:1]))]
    if not edges:
        return {}
    unique, counts = np.unique(np.sort(np.asarray(edges, dtype=np.int64), axis=1), axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(unique, counts)}


def check_input_watertight(mesh: TriangleMesh, seed: int = 0, probes: int = 64, tolerance: float = 0.05) -> bool:
    """Sanity check that a triangle mesh bounds a volume.

    Requires every edge to be shared by exactly two faces and the winding number
    to be near-integral at random probes in the bounding box.
    """
    if not trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False).is_watertight:
        open_edges = sum(1 for c in edge_face_counts(mesh.faces).values() if c != 2)
        logger.warning("input_not_edge_manifold", edges=open_edges)
        return False

    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds()
    pad = 0.1 * (hi - lo)
    probe_points = rng.uniform(lo - pad, hi + pad, size=(probes, 3))
    w = winding_number(mesh, probe_points)
    deviation = float(np.max(np.abs(w - np.round(w))))
    if deviation > tolerance:
        logger.warning("input_winding_not_integral", max_deviation=deviation)
        return False
    return True


def write_point_set(samples: SurfacePointSet, path: Path | str) -> None:
    """Write samples as ASCII XYZ with normals (x y z nx ny nz per line)."""
    data = np.hstack([samples.points, samples.normals])
    np.savetxt(Path(path), data, fmt="%.9g")


def read_point_set(path: Path | str) -> SurfacePointSet:
    """Read an XYZ-with-normals dump written by write_point_set."""
    data = np.loadtxt(Path(path), dtype=np.float64, ndmin=2)
    if data.shape[1] != 6:
        raise InputDataError(f"Expected 6 columns (x y z nx ny nz), found {data.shape[1]}: {path}")
    return SurfacePointSet(points=data[:, :3], normals=data[:, 3:], face_ids=np.full(len(data), -1, dtype=np.int64))
