"""Tests for voromesh.optimizer module."""

import math
from pathlib import Path

import numpy as np
import pytest

from voromesh.errors import ConfigError, InputDataError, OptimizationError
from voromesh.mesh_io import normalize
from voromesh.optimizer import (
    AdamState,
    FitConfig,
    adam_step,
    fit,
    init_generators,
    learning_rate_at,
    offset_regularizer,
    separate_duplicates,
    write_loss_trace,
)
from voromesh.sampling import SurfacePointSet, default_sample_count, sample_surface
from voromesh.shapes import icosphere
from voromesh.voroloss import GeneratorSet


def point_set(points: list[list[float]]) -> SurfacePointSet:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return SurfacePointSet(points, np.tile([0.0, 0.0, 1.0], (len(points), 1)), np.zeros(len(points), dtype=np.int64))


@pytest.fixture(scope="module")
def sphere_samples() -> SurfacePointSet:
    mesh, _ = normalize(icosphere(2))
    return sample_surface(mesh, default_sample_count(8), seed=0)


class TestFitConfig:
    """Tests for FitConfig validation and the learning-rate schedule."""

    def test_defaults(self) -> None:
        config = FitConfig()
        assert config.grid_resolution == 32
        assert config.steps == 400
        assert config.learning_rate == 0.005
        assert config.halving_steps == (80, 120, 200, 250)
        assert config.minibatch_fraction == 0.2
        assert config.k == 32
        assert config.lambda_ == 0.0

    def test_learning_rate_schedule(self) -> None:
        """Test cumulative halving: step 150 is past 80 and 120."""
        config = FitConfig()
        assert learning_rate_at(0, config) == 0.005
        assert learning_rate_at(79, config) == 0.005
        assert learning_rate_at(80, config) == 0.0025
        assert learning_rate_at(150, config) == pytest.approx(0.00125)
        assert learning_rate_at(399, config) == pytest.approx(0.005 / 16)

    def test_halving_steps_past_the_end_ignored(self) -> None:
        config = FitConfig(steps=100)
        assert config.effective_halving_steps == (80,)
        assert learning_rate_at(99, config) == 0.0025

    def test_halving_steps_from_string(self) -> None:
        assert FitConfig(halving_steps="10, 5").halving_steps == (5, 10)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"grid_resolution": 1},
            {"steps": -1},
            {"learning_rate": 0.0},
            {"minibatch_fraction": 0.0},
            {"minibatch_fraction": 1.5},
            {"k": 1},
            {"lambda_": -0.1},
            {"threads": -2},
            {"halving_steps": "80,x"},
            {"halving_steps": [-5]},
        ],
    )
    def test_invalid_values(self, overrides: dict) -> None:
        with pytest.raises(ConfigError):
            FitConfig(**overrides)


class TestInitGenerators:
    """Tests for init_generators function."""

    def test_single_voxel(self) -> None:
        """Test that one sample inside one voxel of a 2^3 grid gives its 8 corners."""
        generators = init_generators(point_set([[-0.2, -0.3, -0.1]]), 2)

        assert len(generators) == 8
        expected = np.array([[x, y, z] for x in (-0.5, 0.0) for y in (-0.5, 0.0) for z in (-0.5, 0.0)])
        np.testing.assert_allclose(generators.positions, expected)
        assert np.array_equal(generators.initial_positions, generators.positions)

    def test_face_sharing_voxels(self) -> None:
        """Test that two face-adjacent voxels give 8 + 8 - 4 nodes."""
        generators = init_generators(point_set([[-0.25, -0.25, -0.25], [0.25, -0.25, -0.25]]), 2)
        assert len(generators) == 12

    def test_lexicographic_order(self) -> None:
        generators = init_generators(point_set([[0.1, 0.2, 0.3], [-0.4, 0.1, -0.2]]), 4)
        order = np.lexsort(generators.positions.T[::-1])
        assert np.array_equal(order, np.arange(len(generators)))

    def test_samples_outside_box_are_clamped(self) -> None:
        """Test that samples beyond the box land in the boundary voxel."""
        generators = init_generators(point_set([[0.7, 0.49, 0.49]]), 2)
        assert len(generators) == 8
        assert generators.positions.max() == 0.5

    def test_matches_dense_voxel_scan(self, sphere_samples: SurfacePointSet) -> None:
        """Test against a brute-force scan over every voxel of the grid."""
        g = 8
        generators = init_generators(sphere_samples, g)

        marked = np.zeros((g, g, g), dtype=bool)
        for p in sphere_samples.points:
            ix, iy, iz = (min(int(math.floor((c + 0.5) * g)), g - 1) for c in np.clip(p, -0.5, 0.5))
            marked[ix, iy, iz] = True
        nodes = set()
        for ix, iy, iz in zip(*np.nonzero(marked)):
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        nodes.add((ix + dx, iy + dy, iz + dz))

        assert len(generators) == len(nodes)
        found = {tuple(int(round(c)) for c in (p + 0.5) * g) for p in generators.positions}
        assert found == nodes

    def test_no_samples(self) -> None:
        with pytest.raises(InputDataError):
            init_generators(point_set([]), 4)


class TestOffsetRegularizer:
    """Tests for offset_regularizer function."""

    def test_zero_offsets(self) -> None:
        generators = GeneratorSet(np.random.default_rng(0).normal(size=(5, 3)))
        value, gradient = offset_regularizer(generators)
        assert value == 0.0
        assert not gradient.any()

    def test_single_offset(self) -> None:
        initial = np.zeros((3, 3)) + np.arange(3)[:, None]
        positions = initial.copy()
        positions[1] += [0.3, 0.0, 0.0]
        value, gradient = offset_regularizer(GeneratorSet(positions, initial))

        assert value == pytest.approx(0.3)
        np.testing.assert_allclose(gradient, [[0, 0, 0], [1, 0, 0], [0, 0, 0]])

    def test_random_offsets_brute_force(self) -> None:
        rng = np.random.default_rng(1)
        initial = rng.normal(size=(20, 3))
        positions = initial + rng.normal(scale=0.1, size=(20, 3))
        value, gradient = offset_regularizer(GeneratorSet(positions, initial))

        norms = np.linalg.norm(positions - initial, axis=1)
        assert value == pytest.approx(norms.max())
        assert np.count_nonzero(np.linalg.norm(gradient, axis=1)) == 1
        assert np.linalg.norm(gradient[np.argmax(norms)]) == pytest.approx(1.0)


class TestAdamStep:
    """Tests for adam_step function."""

    def test_zero_gradient(self) -> None:
        state = AdamState.fresh(np.array([[1.0, 2.0, 3.0]]))
        updated = adam_step(state, np.zeros((1, 3)), lr=0.1)
        assert np.array_equal(updated.params, state.params)
        assert updated.t == 1

    def test_first_step_magnitude(self) -> None:
        """Test that the bias-corrected first step moves each coordinate by about lr."""
        state = AdamState.fresh(np.zeros((2, 3)))
        gradient = np.array([[1.0, -2.0, 0.5], [3.0, 4.0, -5.0]])
        updated = adam_step(state, gradient, lr=0.01)
        np.testing.assert_allclose(updated.params, -0.01 * np.sign(gradient), rtol=1e-6)

    def test_quadratic_converges(self) -> None:
        """Test (x - 3)^2 with lr 0.1 for 500 steps."""
        state = AdamState.fresh(np.zeros(1))
        for _ in range(500):
            state = adam_step(state, 2.0 * (state.params - 3.0), lr=0.1)
        assert abs(float(state.params[0]) - 3.0) < 1e-3

    def test_shape_mismatch(self) -> None:
        with pytest.raises(InputDataError):
            adam_step(AdamState.fresh(np.zeros((2, 3))), np.zeros((3, 3)), lr=0.1)

    def test_non_finite_gradient(self) -> None:
        with pytest.raises(OptimizationError):
            adam_step(AdamState.fresh(np.zeros(2)), np.array([0.0, np.nan]), lr=0.1)


class TestSeparateDuplicates:
    """Tests for separate_duplicates function."""

    def test_distinct_positions_unchanged(self) -> None:
        positions = np.random.default_rng(0).normal(size=(10, 3))
        assert np.array_equal(separate_duplicates(positions), positions)

    def test_duplicates_jittered(self) -> None:
        positions = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        separated = separate_duplicates(positions, seed=3)

        assert len(np.unique(separated, axis=0)) == 3
        assert np.abs(separated - positions).max() <= 1e-9
        assert np.array_equal(separated[0], positions[0])

    def test_near_duplicates_jittered(self) -> None:
        """Test that a pair 1e-13 apart is pulled past the minimum generator distance."""
        positions = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3 + 1e-13], [1.0, 1.0, 1.0]])
        separated = separate_duplicates(positions, seed=0)

        assert np.linalg.norm(separated[1] - separated[0]) > 1e-12
        assert np.array_equal(separated[0], positions[0])
        assert np.array_equal(separated[2], positions[2])


class TestFit:
    """Tests for fit function."""

    def test_zero_steps_returns_initial(self, sphere_samples: SurfacePointSet) -> None:
        initial = init_generators(sphere_samples, 8)
        result = fit(sphere_samples, initial, FitConfig(grid_resolution=8, steps=0))

        assert np.array_equal(result.generators.positions, initial.positions)
        assert result.trace == []

    def test_loss_decreases(self, sphere_samples: SurfacePointSet) -> None:
        """Test that the full-set loss drops over a short run."""
        initial = init_generators(sphere_samples, 8)
        config = FitConfig(grid_resolution=8, steps=60, learning_rate=0.005, halving_steps=(40,))
        result = fit(sphere_samples, initial, config, full_loss_every=20)

        losses = result.full_losses()
        assert sorted(losses) == [0, 20, 40, 60]
        assert losses[60] < losses[0]
        assert result.trace[-1].step == 60
        assert result.trace[40].lr == 0.0025

    def test_offset_regularizer_limits_max_offset(self) -> None:
        """Test that lambda > 0 does not let the farthest generator drift further than lambda = 0."""
        mesh, _ = normalize(icosphere(2))
        samples = sample_surface(mesh, default_sample_count(10), seed=0)
        initial = init_generators(samples, 10)

        def max_offset(lambda_: float) -> float:
            config = FitConfig(grid_resolution=10, steps=120, lambda_=lambda_)
            result = fit(samples, initial, config, full_loss_every=0)
            return float(np.linalg.norm(result.generators.positions - initial.positions, axis=1).max())

        assert max_offset(1.0) <= max_offset(0.0)

    def test_full_loss_checkpoints_do_not_rise(self, sphere_samples: SurfacePointSet) -> None:
        """Test the default schedule: the full loss grows by at most 5% between checkpoints."""
        initial = init_generators(sphere_samples, 8)
        result = fit(sphere_samples, initial, FitConfig(grid_resolution=8), full_loss_every=100)

        losses = result.full_losses()
        assert sorted(losses) == [0, 100, 200, 300, 400]
        for step in (100, 200, 300, 400):
            assert losses[step] <= 1.05 * losses[step - 100]
        assert losses[400] < losses[0]

    def test_deterministic(self, sphere_samples: SurfacePointSet) -> None:
        """Test that identical inputs and seed give bit-identical generators."""
        initial = init_generators(sphere_samples, 8)
        config = FitConfig(grid_resolution=8, steps=10, seed=5)
        first = fit(sphere_samples, initial, config)
        second = fit(sphere_samples, initial, config)
        assert np.array_equal(first.generators.positions, second.generators.positions)

    def test_seed_changes_minibatches(self, sphere_samples: SurfacePointSet) -> None:
        initial = init_generators(sphere_samples, 8)
        first = fit(sphere_samples, initial, FitConfig(grid_resolution=8, steps=5, seed=1))
        second = fit(sphere_samples, initial, FitConfig(grid_resolution=8, steps=5, seed=2))
        assert not np.array_equal(first.generators.positions, second.generators.positions)

    def test_empty_inputs(self, sphere_samples: SurfacePointSet) -> None:
        with pytest.raises(InputDataError):
            fit(sphere_samples, GeneratorSet(np.zeros((0, 3))), FitConfig())
        with pytest.raises(InputDataError):
            fit(point_set([]), init_generators(sphere_samples, 8), FitConfig())

    def test_write_loss_trace(self, tmp_path: Path, sphere_samples: SurfacePointSet) -> None:
        result = fit(sphere_samples, init_generators(sphere_samples, 8), FitConfig(grid_resolution=8, steps=3))
        path = tmp_path / "loss_trace.csv"
        write_loss_trace(result, path)

        lines = path.read_text().splitlines()
        assert lines[0] == "step,lr,minibatch_loss,full_loss"
        assert len(lines) == 1 + 4
        assert lines[-1].startswith("3,")
