"""Clipped 3D Voronoi diagrams built cell by cell with half-space clipping.

Each cell starts as the clip box and is cut by bisector half-spaces of its
neighbors in increasing distance order until the security radius criterion
holds. Vertices carry the set of planes they lie on; plane ids are generator
indices for bisectors and -1..-6 for the box planes (x min, x max, y min,
y max, z min, z max). A vertex key is the sorted tuple of the generators and
box planes defining it, so adjacent cells name shared vertices identically.
Vertices closer than WELD_TOLERANCE are merged after keying.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog
from scipy.spatial import cKDTree

from voromesh.errors import DegenerateGeometryError, InputDataError
from voromesh.utils import parallel_map, resolve_threads
from voromesh.voroloss import GeneratorSet, NeighborIndex, build_index


logger = structlog.get_logger()

CLIP_EPS = 1e-12
WELD_TOLERANCE = 1e-9
BOUNDARY_TOLERANCE = 1e-9
DEGENERATE_VOLUME = 1e-18
INITIAL_NEIGHBORS = 32

VertexKey = tuple[int, ...]


@dataclass(frozen=True)
class ClipBox:
    """Axis-aligned box bounding every cell."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(h <= lo for lo, h in zip(self.lo, self.hi)):
            raise InputDataError(f"Clip box must have positive extent on all axes: {self.lo} .. {self.hi}")

    @classmethod
    def default(cls) -> "ClipBox":
        """The normalized box [-0.5, 0.5]^3 inflated by 50% of its extent per side."""
        return cls((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

    @classmethod
    def enclosing(cls, points: np.ndarray, margin_fraction: float = 0.25) -> "ClipBox":
        """The default box, grown symmetrically until points keep the given margin."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        half = 1.0
        if len(points):
            reach = float(np.max(np.abs(points)))
            # margin = margin_fraction * (2 * half) must separate reach from half
            needed = reach / (1.0 - 2.0 * margin_fraction)
            if needed > half:
                half = needed
        return cls((-half, -half, -half), (half, half, half))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= np.asarray(self.lo)) & (points <= np.asarray(self.hi)), axis=1)

    def plane(self, plane_id: int) -> tuple[np.ndarray, float]:
        """Unit outward normal n and offset c of box plane plane_id (n.x <= c inside)."""
        axis = (-plane_id - 1) // 2
        normal = np.zeros(3)
        if (-plane_id - 1) % 2 == 0:
            normal[axis] = -1.0
            return normal, -self.lo[axis]
        normal[axis] = 1.0
        return normal, self.hi[axis]


@dataclass
class ConvexCell:
    """Convex polytope of one generator.

    faces maps a plane id to a vertex loop (indices into vertices), oriented
    counter-clockwise when seen from outside the cell.
    """

    generator: int
    vertices: np.ndarray
    vertex_keys: list[VertexKey]
    faces: dict[int, list[int]]

    @property
    def neighbors(self) -> list[int]:
        return sorted(p for p in self.faces if p >= 0)

    @property
    def box_faces(self) -> list[int]:
        return sorted(p for p in self.faces if p < 0)

    def _tetrahedra(self) -> tuple[np.ndarray, np.ndarray]:
        """Volumes and centroids of the fan decomposition from the vertex average."""
        apex = self.vertices.mean(axis=0)
        volumes, centroids = [], []
        for loop in self.faces.values():
            a = self.vertices[loop[0]]
            for k in range(1, len(loop) - 1):
                b, c = self.vertices[loop[k]], self.vertices[loop[k + 1]]
                volumes.append(np.dot(a - apex, np.cross(b - apex, c - apex)) / 6.0)
                centroids.append((apex + a + b + c) / 4.0)
        return np.asarray(volumes), np.asarray(centroids).reshape(-1, 3)

    @property
    def volume(self) -> float:
        volumes, _ = self._tetrahedra()
        return float(volumes.sum())


def cell_barycenter(cell: ConvexCell) -> tuple[np.ndarray, bool]:
    """Volumetric centroid of a cell.

    Returns:
        (centroid, degenerate) where degenerate is True when the cell volume is
        near zero and the vertex average was returned instead

    Raises:
        InputDataError: If the cell has no vertices
    """
    if len(cell.vertices) == 0:
        raise InputDataError(f"Cell {cell.generator} is empty")

    volumes, centroids = cell._tetrahedra()
    total = float(volumes.sum())
    if total <= DEGENERATE_VOLUME:
        return cell.vertices.mean(axis=0), True
    return (volumes[:, None] * centroids).sum(axis=0) / total, False


class _Polytope:
    """Mutable convex polytope used while clipping a single cell."""

    def __init__(self, box: ClipBox):
        lo, hi = box.lo, box.hi
        self.points: list[np.ndarray] = []
        self.planes: list[set[int]] = []
        # Corner index = 4*ix + 2*iy + iz; box planes -1..-6
        for ix in (0, 1):
            for iy in (0, 1):
                for iz in (0, 1):
                    self.points.append(np.array([(lo, hi)[ix][0], (lo, hi)[iy][1], (lo, hi)[iz][2]], dtype=np.float64))
                    self.planes.append({-1 - ix, -3 - iy, -5 - iz})
        self.faces: dict[int, list[int]] = {
            -1: [0, 1, 3, 2],
            -2: [4, 6, 7, 5],
            -3: [0, 4, 5, 1],
            -4: [2, 3, 7, 6],
            -5: [0, 2, 6, 4],
            -6: [1, 5, 7, 3],
        }

    def used_vertices(self) -> list[int]:
        return sorted({v for loop in self.faces.values() for v in loop})

    def max_radius(self, center: np.ndarray) -> float:
        used = self.used_vertices()
        return float(np.max(np.linalg.norm(np.asarray([self.points[v] for v in used]) - center, axis=1)))

    def clip(self, plane_id: int, normal: np.ndarray, offset: float) -> bool:
        """Keep the half-space normal.x <= offset (normal is unit length).

        Returns:
            True if the polytope changed
        """
        used = self.used_vertices()
        distance = {v: float(np.dot(normal, self.points[v]) - offset) for v in used}
        if all(d <= CLIP_EPS for d in distance.values()):
            for v, d in distance.items():
                if d >= -CLIP_EPS:
                    self.planes[v].add(plane_id)
            return False
        if all(d >= -CLIP_EPS for d in distance.values()):
            raise DegenerateGeometryError(f"Clipping by plane {plane_id} removes the whole cell")

        def side(v: int) -> int:
            d = distance[v]
            return 1 if d > CLIP_EPS else (-1 if d < -CLIP_EPS else 0)

        cut_cache: dict[tuple[int, int], int] = {}

        def cut(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cut_cache:
                da, db = distance[a], distance[b]
                t = da / (da - db)
                self.points.append(self.points[a] + t * (self.points[b] - self.points[a]))
                self.planes.append((self.planes[a] & self.planes[b]) | {plane_id})
                cut_cache[key] = len(self.points) - 1
            return cut_cache[key]

        on_plane: set[int] = set()
        new_faces: dict[int, list[int]] = {}
        for face_id, loop in self.faces.items():
            output: list[int] = []
            for idx, a in enumerate(loop):
                b = loop[(idx + 1) % len(loop)]
                sa, sb = side(a), side(b)
                if sa <= 0:
                    output.append(a)
                    if sa == 0:
                        on_plane.add(a)
                if sa * sb < 0:
                    c = cut(a, b)
                    output.append(c)
                    on_plane.add(c)
            if len(output) >= 3:
                new_faces[face_id] = output

        for v in on_plane:
            self.planes[v].add(plane_id)

        # Keep only on-plane vertices still referenced by a face
        referenced = {v for loop in new_faces.values() for v in loop}
        ring = [v for v in on_plane if v in referenced]
        if len(ring) >= 3:
            new_faces[plane_id] = self._order_loop(ring, normal)
        self.faces = new_faces
        return True

    def _order_loop(self, ring: list[int], normal: np.ndarray) -> list[int]:
        """Sort coplanar vertices counter-clockwise around normal."""
        pts = np.asarray([self.points[v] for v in ring])
        center = pts.mean(axis=0)
        helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(normal, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        rel = pts - center
        angles = np.arctan2(rel @ e2, rel @ e1)
        return [ring[i] for i in np.argsort(angles, kind="stable")]


def _vertex_key(generator: int, planes: set[int]) -> VertexKey:
    return tuple(sorted(planes | {generator}))


def compute_cell(generators: GeneratorSet, i: int, box: ClipBox, index: NeighborIndex | None = None) -> ConvexCell:
    """Voronoi cell of generator i intersected with the clip box.

    Neighbors are processed in increasing distance; clipping stops once the next
    neighbor is farther than twice the largest vertex distance from q_i.

    Raises:
        DegenerateGeometryError: If q_i coincides with another generator
    """
    positions = generators.positions
    index = index or build_index(generators)
    n = len(positions)
    q_i = positions[i]
    polytope = _Polytope(box)
    radius = polytope.max_radius(q_i)

    k = min(INITIAL_NEIGHBORS, n)
    clipped = {i}
    done = n == 1
    while not done:
        distances, neighbors = index.query(q_i, k)
        for d, j in zip(distances[0], neighbors[0]):
            j = int(j)
            if j in clipped:
                continue
            if d <= 1e-12:
                raise DegenerateGeometryError(f"Generators {i} and {j} coincide")
            if d > 2.0 * radius:
                done = True
                break
            clipped.add(j)
            q_j = positions[j]
            e = q_j - q_i
            length = float(np.linalg.norm(e))
            normal = e / length
            offset = float(np.dot(normal, 0.5 * (q_i + q_j)))
            if polytope.clip(j, normal, offset):
                radius = polytope.max_radius(q_i)
        if k >= n:
            done = True
        k = min(2 * k, n)

    used = polytope.used_vertices()
    remap = {v: local for local, v in enumerate(used)}
    vertices = np.asarray([polytope.points[v] for v in used]).reshape(-1, 3)
    keys = [_vertex_key(i, polytope.planes[v]) for v in used]
    faces = {pid: [remap[v] for v in loop] for pid, loop in polytope.faces.items()}
    return ConvexCell(generator=i, vertices=vertices, vertex_keys=keys, faces=faces)


def _vertex_from_key(key: VertexKey, positions: np.ndarray, box: ClipBox) -> np.ndarray | None:
    """Solve for the vertex defined by exactly three independent planes of its key."""
    generators = [g for g in key if g >= 0]
    box_planes = [p for p in key if p < 0]
    if not generators or len(generators) - 1 + len(box_planes) != 3:
        return None

    rows, rhs = [], []
    g0 = positions[generators[0]]
    for g in generators[1:]:
        q = positions[g]
        rows.append(2.0 * (q - g0))
        rhs.append(float(np.dot(q, q) - np.dot(g0, g0)))
    for p in box_planes:
        normal, offset = box.plane(p)
        rows.append(normal)
        rhs.append(offset)

    matrix = np.asarray(rows)
    if np.linalg.cond(matrix) > 1e8:
        return None
    return np.linalg.solve(matrix, np.asarray(rhs))


@dataclass
class VoronoiDiagram:
    """Clipped Voronoi diagram with globally shared vertices.

    faces maps an unordered generator pair (i, j), i < j, to the shared polygon
    oriented counter-clockwise as seen from outside cell i.
    """

    generators: GeneratorSet
    box: ClipBox
    vertices: np.ndarray
    vertex_keys: list[VertexKey]
    cells: list[ConvexCell]
    faces: dict[tuple[int, int], list[int]]
    clipped: np.ndarray
    inconsistent_faces: int = 0
    cell_faces: list[dict[int, list[int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cells)

    def cell_volumes(self) -> np.ndarray:
        return np.asarray([cell.volume for cell in self.cells])

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.faces)


def _weld(coordinates: np.ndarray, tolerance: float) -> np.ndarray:
    """Union-find clustering of points closer than tolerance; returns representative per point."""
    parent = np.arange(len(coordinates))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    if len(coordinates) > 1:
        for a, b in cKDTree(coordinates).query_pairs(tolerance):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return np.asarray([find(a) for a in range(len(coordinates))])


def _clean_loop(loop: list[int]) -> list[int]:
    """Drop consecutive repeats (including wrap-around) created by welding."""
    out: list[int] = []
    for v in loop:
        if not out or out[-1] != v:
            out.append(v)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _same_cycle(a: list[int], b: list[int]) -> bool:
    if len(a) != len(b) or not a:
        return False
    if a[0] not in b:
        return False
    shift = b.index(a[0])
    return b[shift:] + b[:shift] == a


def compute_diagram(generators: GeneratorSet, box: ClipBox | None = None, threads: int | None = 1) -> VoronoiDiagram:
    """Compute all clipped cells and merge them into one consistent diagram.

    Raises:
        DegenerateGeometryError: If generators coincide or lie outside the box
    """
    box = box or ClipBox.enclosing(generators.positions)
    positions = generators.positions
    if len(positions) == 0:
        raise InputDataError("Cannot build a Voronoi diagram of zero generators")
    if not np.all(box.contains(positions)):
        raise DegenerateGeometryError("Generator outside the clip box")
    margin = float(np.min(np.minimum(positions - np.asarray(box.lo), np.asarray(box.hi) - positions)))
    if margin < 0.25 * float(np.min(box.extent)) - 1e-12:
        logger.warning("clip_box_margin_small", margin=margin)
    generators.ensure_distinct()

    index = build_index(generators)
    cells = parallel_map(
        lambda i: compute_cell(generators, i, box, index), range(len(positions)), resolve_threads(threads)
    )

    # Canonical keys: one coordinate per key, shared by every incident cell
    key_ids: dict[VertexKey, int] = {}
    key_list: list[VertexKey] = []
    key_coords: list[np.ndarray] = []
    for cell in cells:
        for key, coord in zip(cell.vertex_keys, cell.vertices):
            if key not in key_ids:
                key_ids[key] = len(key_list)
                key_list.append(key)
                solved = _vertex_from_key(key, positions, box)
                if solved is None or np.linalg.norm(solved - coord) > 1e-7:
                    solved = coord
                key_coords.append(solved)

    coords = np.asarray(key_coords).reshape(-1, 3)
    representative = _weld(coords, WELD_TOLERANCE)
    unique_reps, global_of_key = np.unique(representative, return_inverse=True)
    vertices = coords[unique_reps]
    vertex_keys = [key_list[r] for r in unique_reps]

    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    clipped = np.zeros(len(cells), dtype=bool)
    cell_faces: list[dict[int, list[int]]] = []
    for cell in cells:
        to_global = [int(global_of_key[key_ids[key]]) for key in cell.vertex_keys]
        loops = {}
        for pid, loop in cell.faces.items():
            cleaned = _clean_loop([to_global[v] for v in loop])
            if len(set(cleaned)) >= 3:
                loops[pid] = cleaned
        cell_faces.append(loops)
        cell.vertices = vertices[np.asarray(to_global, dtype=np.int64)] if to_global else cell.vertices
        on_boundary = np.any(np.abs(cell.vertices - lo) <= BOUNDARY_TOLERANCE) or np.any(
            np.abs(cell.vertices - hi) <= BOUNDARY_TOLERANCE
        )
        clipped[cell.generator] = bool(on_boundary)

    faces: dict[tuple[int, int], list[int]] = {}
    inconsistent = 0
    for i, loops in enumerate(cell_faces):
        for j, loop in loops.items():
            if j < 0:
                continue
            if i < j:
                faces[(i, j)] = loop
                other = cell_faces[j].get(i)
                if other is None or not _same_cycle(loop, other[::-1]):
                    inconsistent += 1
            elif i not in cell_faces[j]:
                faces[(j, i)] = loop[::-1]
                inconsistent += 1

    if inconsistent:
        logger.warning("voronoi_inconsistent_faces", count=inconsistent)
    logger.info(
        "voronoi_diagram_built",
        cells=len(cells),
        vertices=len(vertices),
        faces=len(faces),
        clipped=int(clipped.sum()),
    )
    return VoronoiDiagram(
        generators=generators,
        box=box,
        vertices=vertices,
        vertex_keys=vertex_keys,
        cells=cells,
        faces=faces,
        clipped=clipped,
        inconsistent_faces=inconsistent,
        cell_faces=cell_faces,
    )


def _point_polygon_distance(p: np.ndarray, polygon: np.ndarray) -> float:
    """Euclidean distance from p to a planar convex polygon."""
    center = polygon.mean(axis=0)
    normal = np.zeros(3)
    for k in range(len(polygon)):
        normal += np.cross(polygon[k] - center, polygon[(k + 1) % len(polygon)] - center)
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        return float(np.min(np.linalg.norm(polygon - p, axis=1)))
    normal /= norm

    height = float(np.dot(p - center, normal))
    projected = p - height * normal
    inside = True
    for k in range(len(polygon)):
        a, b = polygon[k], polygon[(k + 1) % len(polygon)]
        if np.dot(np.cross(b - a, projected - a), normal) < 0.0:
            inside = False
            break
    if inside:
        return abs(height)

    best = np.inf
    for k in range(len(polygon)):
        a, b = polygon[k], polygon[(k + 1) % len(polygon)]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def distance_to_faces(diagram: VoronoiDiagram, points: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the nearest Voronoi face of the diagram.

    Only faces of the cell containing the point are searched; box faces are not
    Voronoi faces and are ignored.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _, nearest = build_index(diagram.generators).query(points, 1)
    result = np.full(len(points), np.inf)
    for n, (p, i) in enumerate(zip(points, nearest[:, 0])):
        for j, loop in diagram.cell_faces[int(i)].items():
            if j < 0:
                continue
            result[n] = min(result[n], _point_polygon_distance(p, diagram.vertices[loop]))
    return result


def write_diagram(diagram: VoronoiDiagram, path: Path | str) -> None:
    """Dump vertices (with keys) and pair faces as plain text."""
    lines = [f"# voronoi diagram: {len(diagram.vertices)} vertices, {len(diagram.faces)} faces\n"]
    for v, key in zip(diagram.vertices, diagram.vertex_keys):
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g} key {' '.join(str(k) for k in key)}\n")
    for (i, j), loop in sorted(diagram.faces.items()):
        lines.append(f"f {i} {j} {' '.join(str(v) for v in loop)}\n")
    for i, flag in enumerate(diagram.clipped):
        if flag:
            lines.append(f"c {i}\n")
    with open(Path(path), "w", encoding="utf-8") as f:
        f.writelines(lines)


def cell_contains(diagram: VoronoiDiagram, i: int, points: np.ndarray, tolerance: float = 1e-9) -> np.ndarray:
    """True for points on the inner side of every plane bounding cell i (within tolerance)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    positions = diagram.generators.positions
    inside = np.ones(len(points), dtype=bool)
    for plane_id in diagram.cells[i].faces:
        if plane_id < 0:
            normal, offset = diagram.box.plane(plane_id)
        else:
            e = positions[plane_id] - positions[i]
            normal = e / np.linalg.norm(e)
            offset = float(np.dot(normal, 0.5 * (positions[plane_id] + positions[i])))
        inside &= points @ normal <= offset + tolerance
    return inside
