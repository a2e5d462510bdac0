"""VoroLoss evaluation with kNN truncation and analytic gradients.

For a surface sample x with nearest generator q_i, the loss term is the squared
distance from x to the closest bisector plane between q_i and one of its k-1
next-nearest generators. No Voronoi diagram is built.
"""

from dataclasses import dataclass, field

import numpy as np
import structlog
from scipy.spatial import cKDTree

from voromesh.errors import DegenerateGeometryError, InputDataError
from voromesh.utils import chunk_ranges, parallel_map, resolve_threads


logger = structlog.get_logger()

DEFAULT_K = 32
MIN_GENERATOR_DISTANCE = 1e-12
LOSS_CHUNK_SIZE = 8192


@dataclass
class GeneratorSet:
    """Generator positions, their initial grid positions and optional occupancy."""

    positions: np.ndarray
    initial_positions: np.ndarray | None = None
    occupancy: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.initial_positions is None:
            self.initial_positions = self.positions.copy()
        self.initial_positions = np.asarray(self.initial_positions, dtype=np.float64).reshape(-1, 3)
        if len(self.initial_positions) != len(self.positions):
            raise InputDataError(
                f"initial_positions has {len(self.initial_positions)} rows, positions has {len(self.positions)}"
            )
        if self.occupancy is not None:
            self.occupancy = np.asarray(self.occupancy, dtype=bool).reshape(-1)
            if len(self.occupancy) != len(self.positions):
                raise InputDataError(
                    f"occupancy has {len(self.occupancy)} entries, positions has {len(self.positions)}"
                )

    def __len__(self) -> int:
        return len(self.positions)

    def with_positions(self, positions: np.ndarray) -> "GeneratorSet":
        """Copy with new positions, keeping initial positions and occupancy."""
        occupancy = None if self.occupancy is None else self.occupancy.copy()
        positions = np.array(positions, dtype=np.float64)
        return GeneratorSet(positions, self.initial_positions.copy(), occupancy, dict(self.metadata))

    def with_occupancy(self, occupancy: np.ndarray) -> "GeneratorSet":
        return GeneratorSet(self.positions.copy(), self.initial_positions.copy(), occupancy, dict(self.metadata))

    def min_pairwise_distance(self) -> float:
        if len(self.positions) < 2:
            return float("inf")
        distances, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(distances[:, 1].min())

    def ensure_distinct(self, tolerance: float = MIN_GENERATOR_DISTANCE) -> None:
        """Raise if any two generators are closer than tolerance."""
        d = self.min_pairwise_distance()
        if d <= tolerance:
            raise DegenerateGeometryError(f"Coincident generators (minimum pairwise distance {d:.3g})")


class NeighborIndex:
    """Exact k-nearest-neighbor search over generator positions.

    Results are sorted by distance, ties broken by generator index.
    """

    def __init__(self, positions: np.ndarray):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.tree = cKDTree(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def query(self, points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (distances, indices) of shape (M, k) for points of shape (M, 3).

        Raises:
            InputDataError: If k is not in [1, number of generators]
        """
        n = len(self.positions)
        if not 1 <= k <= n:
            raise InputDataError(f"k must be in [1, {n}], got {k}")

        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        m = len(points)
        out_distances = np.zeros((m, k))
        out_indices = np.zeros((m, k), dtype=np.int64)

        # Widen the query until every generator tied with the k-th is included
        pending = np.arange(m)
        kk = min(k + 1, n)
        while len(pending):
            distances, indices = self.tree.query(points[pending], k=kk)
            distances = np.asarray(distances).reshape(len(pending), kk)
            indices = np.asarray(indices, dtype=np.int64).reshape(len(pending), kk)
            if kk < n:
                complete = distances[:, -1] > distances[:, k - 1]
            else:
                complete = np.ones(len(pending), dtype=bool)

            if np.any(complete):
                order = np.lexsort((indices[complete], distances[complete]), axis=-1)
                rows = pending[complete]
                out_distances[rows] = np.take_along_axis(distances[complete], order, axis=1)[:, :k]
                out_indices[rows] = np.take_along_axis(indices[complete], order, axis=1)[:, :k]

            pending = pending[~complete]
            kk = min(2 * kk, n)
        return out_distances, out_indices


def build_index(generators: GeneratorSet) -> NeighborIndex:
    """Build a kNN index over the current generator positions."""
    if len(generators) == 0:
        raise InputDataError("Cannot build a neighbor index over zero generators")
    return NeighborIndex(generators.positions)


def bisector_distance(x: np.ndarray, q_i: np.ndarray, q_j: np.ndarray) -> float:
    """Distance from x to the bisector plane of q_i and q_j.

    Raises:
        DegenerateGeometryError: If q_i and q_j coincide
    """
    x, q_i, q_j = (np.asarray(v, dtype=np.float64) for v in (x, q_i, q_j))
    e = q_j - q_i
    length = float(np.linalg.norm(e))
    if length <= MIN_GENERATOR_DISTANCE:
        raise DegenerateGeometryError("Bisector of coincident generators is undefined")
    midpoint = 0.5 * (q_i + q_j)
    return abs(float(np.dot(x - midpoint, e / length)))


@dataclass
class VoroLossTerms:
    """Per-sample selections of the VoroLoss.

    cell: nearest generator i_x; neighbor: winning j; distance: bisector distance.
    """

    cell: np.ndarray
    neighbor: np.ndarray
    distance: np.ndarray


def _validate(points: np.ndarray, generators: GeneratorSet, k: int) -> tuple[np.ndarray, int]:
    n = len(generators)
    if n < 2:
        raise InputDataError(f"VoroLoss needs at least 2 generators, got {n}")
    if k < 2:
        raise InputDataError(f"k must be at least 2, got {k}")
    if k > n:
        logger.debug("voroloss_k_clamped", k=k, generators=n)
        k = n
    return np.asarray(points, dtype=np.float64).reshape(-1, 3), k


def _chunk_terms(points: np.ndarray, positions: np.ndarray, index: NeighborIndex, k: int) -> VoroLossTerms:
    _, neighbors = index.query(points, k)
    cell = neighbors[:, 0]
    candidates = neighbors[:, 1:]

    q_i = positions[cell]
    q_j = positions[candidates]
    e = q_j - q_i[:, None, :]
    length = np.linalg.norm(e, axis=-1)
    if np.any(length <= MIN_GENERATOR_DISTANCE):
        raise DegenerateGeometryError("Coincident generators among VoroLoss candidates")

    # (|x - q_j|^2 - |x - q_i|^2) / (2 |q_j - q_i|), nonnegative when x is in cell i
    d_i = np.sum((points - q_i) ** 2, axis=-1)
    d_j = np.sum((points[:, None, :] - q_j) ** 2, axis=-1)
    signed = (d_j - d_i[:, None]) / (2.0 * length)

    # Equal distances go to the lowest generator index
    distance = np.abs(signed)
    best = np.lexsort((candidates, distance), axis=-1)[:, 0]
    rows = np.arange(len(points))
    return VoroLossTerms(cell=cell, neighbor=candidates[rows, best], distance=distance[rows, best])


def voroloss_terms(
    points: np.ndarray, generators: GeneratorSet, k: int = DEFAULT_K, threads: int | None = 1
) -> VoroLossTerms:
    """Nearest generator, winning bisector neighbor and distance for each sample."""
    points, k = _validate(points, generators, k)
    if len(points) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return VoroLossTerms(cell=empty, neighbor=empty.copy(), distance=np.zeros(0))

    index = build_index(generators)
    positions = generators.positions
    ranges = chunk_ranges(len(points), LOSS_CHUNK_SIZE)
    parts = parallel_map(
        lambda r: _chunk_terms(points[r[0] : r[1]], positions, index, k), ranges, resolve_threads(threads)
    )
    return VoroLossTerms(
        cell=np.concatenate([p.cell for p in parts]),
        neighbor=np.concatenate([p.neighbor for p in parts]),
        distance=np.concatenate([p.distance for p in parts]),
    )


def voroloss(points: np.ndarray, generators: GeneratorSet, k: int = DEFAULT_K, threads: int | None = 1) -> float:
    """Sum over samples of the squared distance to the closest candidate bisector."""
    terms = voroloss_terms(points, generators, k, threads)
    return float(np.sum(terms.distance**2))


def _bisector_gradients(
    points: np.ndarray, q_i: np.ndarray, q_j: np.ndarray, s: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of s^2 with respect to q_i and q_j, s = signed bisector distance."""
    e = q_j - q_i
    length = np.linalg.norm(e, axis=-1, keepdims=True)
    u = e / length
    s_col = s[:, None]
    ds_dqi = ((points - q_i) + s_col * u) / length
    ds_dqj = ((q_j - points) - s_col * u) / length
    return 2.0 * s_col * ds_dqi, 2.0 * s_col * ds_dqj


def voroloss_with_grad(
    points: np.ndarray, generators: GeneratorSet, k: int = DEFAULT_K, threads: int | None = 1
) -> tuple[float, np.ndarray]:
    """VoroLoss and its gradient with respect to every generator position.

    The nearest generator and the winning bisector are held fixed, so each sample
    contributes gradient only to q_{i_x} and its winning q_j.
    """
    points, k = _validate(points, generators, k)
    positions = generators.positions
    gradient = np.zeros_like(positions)
    if len(points) == 0:
        return 0.0, gradient

    terms = voroloss_terms(points, generators, k, threads)
    q_i = positions[terms.cell]
    q_j = positions[terms.neighbor]
    d_i = np.sum((points - q_i) ** 2, axis=-1)
    d_j = np.sum((points - q_j) ** 2, axis=-1)
    s = (d_j - d_i) / (2.0 * np.linalg.norm(q_j - q_i, axis=-1))

    grad_i, grad_j = _bisector_gradients(points, q_i, q_j, s)
    np.add.at(gradient, terms.cell, grad_i)
    np.add.at(gradient, terms.neighbor, grad_j)
    return float(np.sum(terms.distance**2)), gradient
