"""Occupancy tagging, VoroMesh extraction, non-manifold repair and watertight validation."""

from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
import structlog
from scipy.spatial import cKDTree

from voromesh.errors import InputDataError
from voromesh.mesh_io import PolygonMesh, TriangleMesh
from voromesh.optimizer import separate_duplicates
from voromesh.sampling import batch_occupancy, edge_face_counts
from voromesh.voroloss import GeneratorSet
from voromesh.voronoi import VoronoiDiagram, cell_barycenter


logger = structlog.get_logger()

INTERSECTION_EPS = 1e-12


@dataclass
class VoroMeshSurface(PolygonMesh):
    """Polygon surface between inside and outside cells.

    face_pairs[f] is (inside generator, outside generator); each face normal
    points from the inside generator toward the outside one.
    """

    face_pairs: list[tuple[int, int]] = field(default_factory=list)
    duplicated_vertices: int = 0

    def __post_init__(self) -> None:
        super().__post_init__()
        self.face_pairs = [(int(a), int(b)) for a, b in self.face_pairs]
        if self.face_pairs and len(self.face_pairs) != len(self.faces):
            raise InputDataError(f"{len(self.face_pairs)} face pairs for {len(self.faces)} faces")


def assign_occupancy(diagram: VoronoiDiagram, gt: TriangleMesh, threads: int | None = 1) -> np.ndarray:
    """Inside flag per cell: clipped cells are outside, others query gt at their barycenter."""
    occupancy = np.zeros(len(diagram), dtype=bool)
    free = np.flatnonzero(~diagram.clipped)
    if len(free) == 0:
        return occupancy

    centers = []
    degenerate = 0
    for i in free:
        center, flat = cell_barycenter(diagram.cells[i])
        centers.append(center)
        degenerate += int(flat)
    if degenerate:
        logger.warning("degenerate_cells", count=degenerate)

    occupancy[free] = batch_occupancy(gt, np.asarray(centers), threads)
    logger.info("occupancy_assigned", inside=int(occupancy.sum()), cells=len(occupancy))
    return occupancy


def force_clipped_outside(diagram: VoronoiDiagram, occupancy: np.ndarray) -> np.ndarray:
    """Copy of occupancy with every clipped cell set to outside."""
    occupancy = np.array(occupancy, dtype=bool)
    forced = int(np.count_nonzero(occupancy & diagram.clipped))
    if forced:
        logger.warning("clipped_cells_forced_outside", count=forced)
    occupancy[diagram.clipped] = False
    return occupancy


def extract_voromesh(diagram: VoronoiDiagram, occupancy: np.ndarray) -> VoroMeshSurface:
    """Faces separating cells of opposite occupancy, oriented inside to outside.

    Raises:
        InputDataError: If occupancy does not have one entry per cell
    """
    occupancy = np.asarray(occupancy, dtype=bool).reshape(-1)
    if len(occupancy) != len(diagram):
        raise InputDataError(f"Occupancy has {len(occupancy)} entries for {len(diagram)} cells")

    if np.any(occupancy & diagram.clipped):
        logger.warning("clipped_cells_inside", count=int(np.count_nonzero(occupancy & diagram.clipped)))

    loops: list[list[int]] = []
    pairs: list[tuple[int, int]] = []
    for (i, j), loop in sorted(diagram.faces.items()):
        if occupancy[i] == occupancy[j]:
            continue
        if occupancy[i]:
            loops.append(list(loop))
            pairs.append((i, j))
        else:
            loops.append(list(reversed(loop)))
            pairs.append((j, i))

    if not loops:
        logger.warning("voromesh_empty", inside=int(occupancy.sum()), cells=len(occupancy))
        return VoroMeshSurface(np.zeros((0, 3)), [], [])

    used, inverse = np.unique(np.concatenate([np.asarray(loop) for loop in loops]), return_inverse=True)
    faces, start = [], 0
    for loop in loops:
        faces.append(inverse[start : start + len(loop)].tolist())
        start += len(loop)

    logger.info("voromesh_extracted", vertices=len(used), faces=len(faces))
    return VoroMeshSurface(diagram.vertices[used], faces, pairs)


def _newell_normal(points: np.ndarray) -> np.ndarray:
    nxt = np.roll(points, -1, axis=0)
    normal = np.array(
        [
            np.sum((points[:, 1] - nxt[:, 1]) * (points[:, 2] + nxt[:, 2])),
            np.sum((points[:, 2] - nxt[:, 2]) * (points[:, 0] + nxt[:, 0])),
            np.sum((points[:, 0] - nxt[:, 0]) * (points[:, 1] + nxt[:, 1])),
        ]
    )
    norm = np.linalg.norm(normal)
    return normal / norm if norm > 0.0 else normal


def _radial_pairs(mesh: PolygonMesh, entries: list[tuple[int, int]], a: int, b: int) -> list[tuple[int, int]]:
    """Pair the faces around a non-manifold edge (a, b) so each pair bounds one inside wedge.

    entries are (face, position) with faces[face][position] the edge start.
    Returns index pairs into entries.
    """
    va, vb = mesh.vertices[a], mesh.vertices[b]
    axis = vb - va
    axis /= np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    angles, inside_ahead = [], []
    for f, _ in entries:
        points = mesh.vertices[mesh.faces[f]]
        radial = points.mean(axis=0) - va
        radial -= np.dot(radial, axis) * axis
        angles.append(np.arctan2(np.dot(radial, e2), np.dot(radial, e1)))
        # Inside lies on the -normal side; ahead means toward increasing angle
        inside_ahead.append(bool(np.dot(_newell_normal(points), np.cross(axis, radial)) < 0.0))

    order = [int(k) for k in np.argsort(angles, kind="stable")]
    flags = [inside_ahead[k] for k in order]
    count = len(order)
    if count % 2 == 0 and all(flags[n] != flags[(n + 1) % count] for n in range(count)):
        start = 0 if flags[0] else 1
        return [(order[(start + 2 * n) % count], order[(start + 2 * n + 1) % count]) for n in range(count // 2)]

    # Not alternating: pair opposite traversal directions greedily in radial order
    pending: dict[bool, list[int]] = {True: [], False: []}
    pairs = []
    for k in order:
        f, p = entries[k]
        forward = mesh.faces[f][p] == a
        if pending[not forward]:
            pairs.append((pending[not forward].pop(0), k))
        else:
            pending[forward].append(k)
    return pairs


def repair_nonmanifold(mesh: PolygonMesh) -> PolygonMesh:
    """Duplicate vertices so every vertex has one fan and every edge two faces.

    Faces around an edge shared by more than two faces are paired radially so
    that each pair bounds a single inside wedge. Corners of faces at a vertex
    are then linked through paired edges; each connected group of corners
    beyond the first gets its own copy of the vertex.
    """
    faces = [list(face) for face in mesh.faces]
    edges: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for f, face in enumerate(faces):
        for p, a in enumerate(face):
            b = face[(p + 1) % len(face)]
            edges[(a, b) if a < b else (b, a)].append((f, p))

    parent: dict[tuple[int, int], tuple[int, int]] = {}

    def find(c: tuple[int, int]) -> tuple[int, int]:
        parent.setdefault(c, c)
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    def union(c: tuple[int, int], d: tuple[int, int]) -> None:
        rc, rd = find(c), find(d)
        if rc != rd:
            parent[max(rc, rd)] = min(rc, rd)

    def corner(entry: tuple[int, int], vertex: int) -> tuple[int, int]:
        f, p = entry
        return (f, p) if faces[f][p] == vertex else (f, (p + 1) % len(faces[f]))

    split_edges = 0
    for (a, b), entries in edges.items():
        if len(entries) == 2:
            pairs = [(0, 1)]
        elif len(entries) > 2:
            pairs = _radial_pairs(mesh, entries, a, b)
            split_edges += 1
        else:
            continue
        for k, m in pairs:
            for vertex in (a, b):
                union(corner(entries[k], vertex), corner(entries[m], vertex))

    fans: dict[int, dict[tuple[int, int], list[tuple[int, int]]]] = defaultdict(lambda: defaultdict(list))
    for f, face in enumerate(faces):
        for p, v in enumerate(face):
            fans[v][find((f, p))].append((f, p))

    vertices = list(mesh.vertices)
    duplicated = 0
    for v in sorted(fans):
        groups = sorted(fans[v].values())
        for group in groups[1:]:
            vertices.append(mesh.vertices[v].copy())
            for f, p in group:
                faces[f][p] = len(vertices) - 1
            duplicated += 1

    if duplicated == 0:
        return mesh

    logger.info("nonmanifold_repaired", duplicated_vertices=duplicated, nonmanifold_edges=split_edges)
    repaired = replace(mesh, vertices=np.asarray(vertices), faces=faces)
    if isinstance(repaired, VoroMeshSurface):
        repaired.duplicated_vertices = mesh.duplicated_vertices + duplicated
    return repaired


@dataclass
class WatertightReport:
    """Topological and geometric validity of a surface."""

    vertices: int
    faces: int
    boundary_edges: int
    nonmanifold_edges: int
    consistently_oriented: bool
    self_intersections: int
    duplicated_vertices: int = 0

    @property
    def edge_manifold(self) -> bool:
        return self.boundary_edges == 0 and self.nonmanifold_edges == 0

    @property
    def closed(self) -> bool:
        return self.faces > 0 and self.boundary_edges == 0

    @property
    def watertight(self) -> bool:
        return self.edge_manifold and self.closed and self.consistently_oriented and self.self_intersections == 0

    def to_dict(self) -> dict:
        return {
            "watertight": self.watertight,
            "edge_manifold": self.edge_manifold,
            "closed": self.closed,
            "consistently_oriented": self.consistently_oriented,
            "self_intersections": self.self_intersections,
            "boundary_edges": self.boundary_edges,
            "nonmanifold_edges": self.nonmanifold_edges,
            "vertices": self.vertices,
            "faces": self.faces,
            "duplicated_vertices": self.duplicated_vertices,
        }


def _segments_cross_triangles(p: np.ndarray, q: np.ndarray, tri: np.ndarray, eps: float) -> np.ndarray:
    """Strict segment/triangle crossing per row (Moller-Trumbore with open intervals)."""
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    direction = q - p
    edge1 = v1 - v0
    edge2 = v2 - v0
    h = np.cross(direction, edge2)
    det = np.einsum("ni,ni->n", edge1, h)
    scale = np.linalg.norm(direction, axis=1) * np.linalg.norm(edge1, axis=1) * np.linalg.norm(edge2, axis=1)
    valid = np.abs(det) > eps * np.maximum(scale, 1e-300)
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)

    s = p - v0
    u = inv * np.einsum("ni,ni->n", s, h)
    qv = np.cross(s, edge1)
    v = inv * np.einsum("ni,ni->n", direction, qv)
    t = inv * np.einsum("ni,ni->n", edge2, qv)
    return valid & (u > eps) & (v > eps) & (u + v < 1.0 - eps) & (t > eps) & (t < 1.0 - eps)


def _coplanar_overlap(t1: np.ndarray, t2: np.ndarray, normal: np.ndarray, eps: float) -> bool:
    """Strict overlap of two coplanar triangles, tested in the dominant projection plane."""
    drop = int(np.argmax(np.abs(normal)))
    keep = [k for k in range(3) if k != drop]
    a, b = t1[:, keep], t2[:, keep]

    def orient(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
        return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    for i in range(3):
        p, q = a[i], a[(i + 1) % 3]
        for j in range(3):
            r, s = b[j], b[(j + 1) % 3]
            d1, d2 = orient(p, q, r), orient(p, q, s)
            d3, d4 = orient(r, s, p), orient(r, s, q)
            if d1 * d2 < -eps and d3 * d4 < -eps:
                return True

    def strictly_inside(point: np.ndarray, tri: np.ndarray) -> bool:
        signs = [orient(tri[k], tri[(k + 1) % 3], point) for k in range(3)]
        return all(s > eps for s in signs) or all(s < -eps for s in signs)

    return strictly_inside(a.mean(axis=0), b) or strictly_inside(b.mean(axis=0), a)


def count_self_intersections(mesh: PolygonMesh | TriangleMesh, eps: float = INTERSECTION_EPS) -> int:
    """Number of intersecting triangle pairs of the fan-triangulated surface.

    Pairs sharing a vertex position are skipped, as are pairs that only touch.
    """
    tri_mesh = mesh if isinstance(mesh, TriangleMesh) else mesh.triangulate()
    if len(tri_mesh.faces) < 2:
        return 0

    _, position_ids = np.unique(tri_mesh.vertices, axis=0, return_inverse=True)
    position_ids = np.asarray(position_ids).reshape(-1)
    corners = position_ids[tri_mesh.faces]
    tris = tri_mesh.triangles

    centroids = tris.mean(axis=1)
    radii = np.max(np.linalg.norm(tris - centroids[:, None, :], axis=2), axis=1)
    tree = cKDTree(centroids)
    neighbors = tree.query_ball_point(centroids, radii + radii.max())
    first = np.repeat(np.arange(len(tris)), [len(n) for n in neighbors])
    second = np.concatenate([np.asarray(n, dtype=np.int64) for n in neighbors]) if len(first) else first
    keep = second > first
    first, second = first[keep], second[keep]

    lo, hi = tris.min(axis=1), tris.max(axis=1)
    overlap = np.all((lo[first] <= hi[second] + eps) & (lo[second] <= hi[first] + eps), axis=1)
    shared = np.any(corners[first][:, :, None] == corners[second][:, None, :], axis=(1, 2))
    keep = overlap & ~shared
    first, second = first[keep], second[keep]
    if len(first) == 0:
        return 0

    t1, t2 = tris[first], tris[second]
    hit = np.zeros(len(first), dtype=bool)
    for k in range(3):
        hit |= _segments_cross_triangles(t1[:, k], t1[:, (k + 1) % 3], t2, eps)
        hit |= _segments_cross_triangles(t2[:, k], t2[:, (k + 1) % 3], t1, eps)

    n1 = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    n1_len = np.linalg.norm(n1, axis=1)
    unit = n1 / np.where(n1_len > 0.0, n1_len, 1.0)[:, None]
    heights = np.abs(np.einsum("nki,ni->nk", t2 - t1[:, :1, :], unit))
    size = np.maximum(radii[first], radii[second])
    coplanar = (n1_len > 0.0) & np.all(heights <= 1e-9 * np.maximum(size, 1e-300)[:, None], axis=1)
    for n in np.flatnonzero(coplanar & ~hit):
        hit[n] = _coplanar_overlap(t1[n], t2[n], unit[n], eps)

    return int(np.count_nonzero(hit))


def check_watertight(mesh: PolygonMesh | TriangleMesh) -> WatertightReport:
    """Edge manifoldness, closedness, orientation consistency and self-intersections."""
    faces = mesh.faces.tolist() if isinstance(mesh, TriangleMesh) else mesh.faces
    counts = edge_face_counts(faces)

    directed: dict[tuple[int, int], int] = defaultdict(int)
    for face in faces:
        for a, b in zip(face, face[1:] + face[:1]):
            directed[(a, b)] += 1
    oriented = all(c == 1 for c in directed.values())

    report = WatertightReport(
        vertices=len(mesh.vertices),
        faces=len(faces),
        boundary_edges=sum(1 for c in counts.values() if c == 1),
        nonmanifold_edges=sum(1 for c in counts.values() if c > 2),
        consistently_oriented=oriented,
        self_intersections=count_self_intersections(mesh),
        duplicated_vertices=getattr(mesh, "duplicated_vertices", 0),
    )
    log = logger.info if report.watertight else logger.warning
    log("watertight_checked", **report.to_dict())
    return report


def surface_volume(mesh: PolygonMesh | TriangleMesh) -> float:
    """Signed volume enclosed by an outward-oriented closed surface."""
    tri_mesh = mesh if isinstance(mesh, TriangleMesh) else mesh.triangulate()
    if len(tri_mesh.faces) == 0:
        return 0.0
    t = tri_mesh.triangles
    return float(np.einsum("ni,ni->n", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def perturb_generators(
    generators: GeneratorSet, delta_percent: float, grid_resolution: int, seed: int = 0
) -> GeneratorSet:
    """Add uniform noise in [-delta * h, delta * h] per coordinate, h = 1 / grid_resolution.

    Occupancy is carried over unchanged.

    Raises:
        InputDataError: If delta_percent is negative or grid_resolution < 1
    """
    if delta_percent < 0.0:
        raise InputDataError(f"delta_percent must be nonnegative, got {delta_percent}")
    if grid_resolution < 1:
        raise InputDataError(f"grid_resolution must be positive, got {grid_resolution}")

    magnitude = delta_percent / 100.0 / grid_resolution
    if magnitude == 0.0:
        return generators.with_positions(generators.positions.copy())

    rng = np.random.default_rng(seed)
    noise = rng.uniform(-magnitude, magnitude, size=generators.positions.shape)
    positions = separate_duplicates(generators.positions + noise, seed=seed)
    logger.info("generators_perturbed", delta_percent=delta_percent, magnitude=magnitude, generators=len(positions))
    return generators.with_positions(positions)
