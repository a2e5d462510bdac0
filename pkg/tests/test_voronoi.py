"""Tests for voromesh.voronoi module."""

from pathlib import Path

import numpy as np
import pytest

from voromesh.errors import DegenerateGeometryError, InputDataError
from voromesh.mesh_io import normalize
from voromesh.optimizer import init_generators
from voromesh.sampling import default_sample_count, sample_surface
from voromesh.shapes import icosphere
from voromesh.voroloss import GeneratorSet, build_index
from voromesh.voronoi import (
    ClipBox,
    ConvexCell,
    cell_barycenter,
    cell_contains,
    compute_cell,
    compute_diagram,
    distance_to_faces,
    write_diagram,
)


UNIT_BOX = ClipBox((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))


def newell_normal(points: np.ndarray) -> np.ndarray:
    normal = np.zeros(3)
    for k in range(len(points)):
        a, b = points[k], points[(k + 1) % len(points)]
        normal += np.cross(a, b)
    return normal


def random_generators(seed: int, count: int, half: float = 0.4) -> GeneratorSet:
    return GeneratorSet(np.random.default_rng(seed).uniform(-half, half, size=(count, 3)))


class TestClipBox:
    """Tests for ClipBox."""

    def test_default(self) -> None:
        box = ClipBox.default()
        assert box.lo == (-1.0, -1.0, -1.0)
        assert box.hi == (1.0, 1.0, 1.0)
        assert box.volume == 8.0

    def test_enclosing_keeps_default_for_normalized_points(self) -> None:
        assert ClipBox.enclosing(np.array([[0.5, -0.5, 0.2]])) == ClipBox.default()

    def test_enclosing_grows_for_distant_points(self) -> None:
        """Test that a point at 0.9 keeps a quarter of the extent as margin."""
        box = ClipBox.enclosing(np.array([[0.9, 0.0, 0.0]]))
        assert box.hi[0] == pytest.approx(1.8)
        assert box.hi[0] - 0.9 == pytest.approx(0.25 * (box.hi[0] - box.lo[0]))

    def test_invalid_extent(self) -> None:
        with pytest.raises(InputDataError):
            ClipBox((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))

    def test_planes_bound_the_box(self) -> None:
        """Test that every box plane keeps the box center and excludes points beyond it."""
        box = UNIT_BOX
        for plane_id in range(-1, -7, -1):
            normal, offset = box.plane(plane_id)
            assert np.dot(normal, np.zeros(3)) <= offset
            assert np.dot(normal, 0.6 * normal) > offset


class TestConvexCell:
    """Tests for ConvexCell volume and barycenter."""

    def test_tetrahedron(self) -> None:
        vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        faces = {0: [0, 2, 1], 1: [0, 1, 3], 2: [0, 3, 2], 3: [1, 2, 3]}
        cell = ConvexCell(generator=0, vertices=vertices, vertex_keys=[(0,)] * 4, faces=faces)

        assert cell.volume == pytest.approx(1.0 / 6.0)
        center, degenerate = cell_barycenter(cell)
        assert not degenerate
        np.testing.assert_allclose(center, [0.25, 0.25, 0.25])

    def test_flat_cell_is_degenerate(self) -> None:
        """Test that a zero-volume cell falls back to the vertex average."""
        vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        cell = ConvexCell(generator=0, vertices=vertices, vertex_keys=[(0,)] * 3, faces={0: [0, 1, 2], 1: [0, 2, 1]})

        center, degenerate = cell_barycenter(cell)
        assert degenerate
        np.testing.assert_allclose(center, vertices.mean(axis=0))

    def test_empty_cell(self) -> None:
        cell = ConvexCell(generator=3, vertices=np.zeros((0, 3)), vertex_keys=[], faces={})
        with pytest.raises(InputDataError):
            cell_barycenter(cell)


class TestComputeCell:
    """Tests for compute_cell function."""

    def test_single_generator_is_the_box(self) -> None:
        cell = compute_cell(GeneratorSet(np.zeros((1, 3))), 0, UNIT_BOX)

        assert cell.volume == pytest.approx(1.0)
        assert cell.neighbors == []
        assert cell.box_faces == [-6, -5, -4, -3, -2, -1]

    def test_half_space(self) -> None:
        """Test that the cell of the left generator is the x <= 0 half of the box."""
        generators = GeneratorSet(np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]]))
        cell = compute_cell(generators, 0, UNIT_BOX, build_index(generators))

        assert cell.volume == pytest.approx(0.5)
        assert cell.neighbors == [1]
        assert -2 not in cell.faces
        np.testing.assert_allclose(cell.vertices[:, 0].max(), 0.0, atol=1e-12)

    def test_lattice_center_is_a_voxel(self) -> None:
        """Test the center of a 5x5x5 lattice, whose 26 nearest neighbors come in equidistant shells."""
        axis = np.arange(5) / 4.0 - 0.5
        generators = GeneratorSet(np.array([[x, y, z] for x in axis for y in axis for z in axis]))
        cell = compute_cell(generators, 62, UNIT_BOX, build_index(generators))

        assert cell.volume == pytest.approx(0.25**3)
        assert sorted(cell.faces) == [37, 57, 61, 63, 67, 87]
        np.testing.assert_allclose(cell.vertices.min(axis=0), -0.125, atol=1e-12)
        np.testing.assert_allclose(cell.vertices.max(axis=0), 0.125, atol=1e-12)


class TestComputeDiagram:
    """Tests for compute_diagram function."""

    def test_two_generators(self) -> None:
        """Test two generators at x = +-0.25 in the unit box."""
        diagram = compute_diagram(GeneratorSet(np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])), UNIT_BOX)

        np.testing.assert_allclose(diagram.cell_volumes(), [0.5, 0.5])
        assert diagram.adjacent_pairs() == [(0, 1)]
        assert diagram.clipped.tolist() == [True, True]

        loop = diagram.faces[(0, 1)]
        assert len(loop) == 4
        np.testing.assert_allclose(diagram.vertices[loop][:, 0], 0.0, atol=1e-12)
        # Counter-clockwise seen from outside cell 0 means the normal points at cell 1
        assert newell_normal(diagram.vertices[loop])[0] > 0.0

    def test_octants(self) -> None:
        """Test eight generators at the octant centers of the unit box."""
        positions = np.array([[x, y, z] for x in (-0.25, 0.25) for y in (-0.25, 0.25) for z in (-0.25, 0.25)])
        diagram = compute_diagram(GeneratorSet(positions), UNIT_BOX)

        np.testing.assert_allclose(diagram.cell_volumes(), 0.125)
        assert len(diagram.faces) == 12
        for cell in diagram.cells:
            center, degenerate = cell_barycenter(cell)
            assert not degenerate
            np.testing.assert_allclose(center, positions[cell.generator], atol=1e-12)

    def test_lattice(self) -> None:
        """Test a 3x3x3 lattice: one interior cell and 54 face-sharing pairs."""
        axis = (-0.25, 0.0, 0.25)
        positions = np.array([[x, y, z] for x in axis for y in axis for z in axis])
        diagram = compute_diagram(GeneratorSet(positions), UNIT_BOX)

        assert len(diagram) == 27
        assert int(np.count_nonzero(~diagram.clipped)) == 1
        assert not diagram.clipped[13]
        assert len(diagram.faces) == 54
        assert diagram.cell_volumes()[13] == pytest.approx(0.25**3)
        assert diagram.cell_volumes().sum() == pytest.approx(1.0)

    def test_random_cells_partition_the_box(self) -> None:
        """Test that random cells tile the clip box and share every face consistently."""
        generators = random_generators(0, 60)
        diagram = compute_diagram(generators)

        assert diagram.cell_volumes().sum() == pytest.approx(diagram.box.volume, rel=1e-9)
        assert diagram.inconsistent_faces == 0
        assert np.all(diagram.cell_volumes() > 0.0)

    def test_grid_generators_partition_the_box(self) -> None:
        """Test cells of unfitted grid generators, where many neighbors are equidistant."""
        mesh, _ = normalize(icosphere(2))
        samples = sample_surface(mesh, default_sample_count(6), seed=0)
        generators = init_generators(samples, 6)
        diagram = compute_diagram(generators)

        assert diagram.cell_volumes().sum() == pytest.approx(diagram.box.volume, rel=1e-9)
        assert np.all(diagram.cell_volumes() > 0.0)

        lo, hi = np.asarray(diagram.box.lo), np.asarray(diagram.box.hi)
        points = np.random.default_rng(0).uniform(lo, hi, size=(5000, 3))
        owners = np.zeros(len(points), dtype=np.int64)
        for i in range(len(generators)):
            owners += cell_contains(diagram, i, points)
        assert np.all(owners == 1)

    def test_vertices_are_equidistant_from_their_generators(self) -> None:
        """Test that a vertex keyed by four generators is their circumcenter."""
        generators = random_generators(1, 40)
        diagram = compute_diagram(generators)

        checked = 0
        for vertex, key in zip(diagram.vertices, diagram.vertex_keys):
            owners = [g for g in key if g >= 0]
            if len(owners) != 4 or len(key) != 4:
                continue
            distances = np.linalg.norm(generators.positions[owners] - vertex, axis=1)
            np.testing.assert_allclose(distances, distances[0], atol=1e-7)
            checked += 1
        assert checked > 0

    def test_points_lie_in_their_nearest_cell(self) -> None:
        generators = random_generators(2, 30)
        diagram = compute_diagram(generators)
        points = np.random.default_rng(3).uniform(-0.9, 0.9, size=(300, 3))
        _, nearest = build_index(generators).query(points, 1)

        for i in range(len(generators)):
            members = points[nearest[:, 0] == i]
            if len(members):
                assert np.all(cell_contains(diagram, i, members))

    def test_barycenter_matches_monte_carlo(self) -> None:
        """Test a clipped cell centroid against 10^6 rejection samples."""
        generators = random_generators(5, 10, half=0.5)
        diagram = compute_diagram(generators, UNIT_BOX)
        cell = diagram.cells[0]

        lo, hi = cell.vertices.min(axis=0), cell.vertices.max(axis=0)
        points = np.random.default_rng(6).uniform(lo, hi, size=(1_000_000, 3))
        inside = points[cell_contains(diagram, 0, points, tolerance=0.0)]
        center, _ = cell_barycenter(cell)
        np.testing.assert_allclose(center, inside.mean(axis=0), atol=1e-3)

    def test_threads_match_single_thread(self) -> None:
        generators = random_generators(4, 50)
        single = compute_diagram(generators, threads=1)
        threaded = compute_diagram(generators, threads=4)

        assert single.adjacent_pairs() == threaded.adjacent_pairs()
        np.testing.assert_allclose(single.cell_volumes(), threaded.cell_volumes())

    def test_coincident_generators(self) -> None:
        with pytest.raises(DegenerateGeometryError):
            compute_diagram(GeneratorSet(np.array([[0.1, 0.1, 0.1], [0.1, 0.1, 0.1], [0.0, 0.0, 0.0]])))

    def test_generator_outside_box(self) -> None:
        with pytest.raises(DegenerateGeometryError, match="outside the clip box"):
            compute_diagram(GeneratorSet(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])), ClipBox.default())

    def test_empty(self) -> None:
        with pytest.raises(InputDataError):
            compute_diagram(GeneratorSet(np.zeros((0, 3))))


class TestDistanceToFaces:
    """Tests for distance_to_faces function."""

    def test_projection_inside_face(self) -> None:
        diagram = compute_diagram(GeneratorSet(np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])), UNIT_BOX)
        np.testing.assert_allclose(distance_to_faces(diagram, np.array([[0.3, 0.1, 0.1]])), [0.3])

    def test_projection_outside_face(self) -> None:
        """Test that a point beyond the clipped face measures to the face edge."""
        diagram = compute_diagram(GeneratorSet(np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])), UNIT_BOX)
        distance = distance_to_faces(diagram, np.array([[0.3, 0.7, 0.0]]))
        np.testing.assert_allclose(distance, [np.hypot(0.3, 0.2)])


class TestWriteDiagram:
    """Tests for write_diagram function."""

    def test_dump_lines(self, tmp_path: Path) -> None:
        diagram = compute_diagram(GeneratorSet(np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])), UNIT_BOX)
        path = tmp_path / "diagram.txt"
        write_diagram(diagram, path)

        lines = path.read_text().splitlines()
        assert lines[0].startswith("# voronoi diagram")
        assert sum(line.startswith("v ") for line in lines) == len(diagram.vertices)
        assert [line.split()[:3] for line in lines if line.startswith("f ")] == [["f", "0", "1"]]
        assert [line for line in lines if line.startswith("c ")] == ["c 0", "c 1"]
