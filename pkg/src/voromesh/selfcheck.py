"""Randomized consistency checks of the loss, the diagram and the extraction.

Every check draws its instances from a seeded generator, so a given seed always
produces the same pass/fail set.
"""

import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import structlog

from voromesh.errors import VoroMeshError
from voromesh.extraction import (
    assign_occupancy,
    check_watertight,
    extract_voromesh,
    force_clipped_outside,
    repair_nonmanifold,
    surface_volume,
)
from voromesh.mesh_io import normalize
from voromesh.optimizer import FitConfig, fit, init_generators
from voromesh.sampling import default_sample_count, sample_surface
from voromesh.shapes import icosphere
from voromesh.voroloss import GeneratorSet, build_index, voroloss, voroloss_with_grad
from voromesh.voronoi import ClipBox, cell_contains, compute_diagram, distance_to_faces


logger = structlog.get_logger()

LossFn = Callable[[np.ndarray, GeneratorSet, int], float]

# Probes stay in [-0.5, 0.5]^3; this box keeps every nearest face unclipped.
ORACLE_BOX = ClipBox((-10.0, -10.0, -10.0), (10.0, 10.0, 10.0))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


@dataclass
class SelfCheckReport:
    seed: int
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "checks": [
                {"name": r.name, "passed": r.passed, "detail": r.detail, "seconds": r.seconds} for r in self.results
            ],
        }


def _random_generators(rng: np.random.Generator, low: int, high: int) -> GeneratorSet:
    count = int(rng.integers(low, high + 1))
    return GeneratorSet(rng.uniform(-0.5, 0.5, size=(count, 3)))


def check_closest_face(
    seed: int = 0, instances: int = 20, probes: int = 200, loss_fn: LossFn = voroloss
) -> CheckResult:
    """VoroLoss with k = |Q| equals the summed squared distance to the nearest Voronoi face."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        generators = _random_generators(rng, 5, 50)
        points = rng.uniform(-0.5, 0.5, size=(probes, 3))
        loss = loss_fn(points, generators, len(generators))
        diagram = compute_diagram(generators, ORACLE_BOX)
        exact = float(np.sum(distance_to_faces(diagram, points) ** 2))
        worst = max(worst, abs(loss - exact) / max(abs(exact), 1e-300))

    return CheckResult("closest_face", worst <= 1e-9, f"max relative error {worst:.3g} over {instances} instances")


def check_gradient(seed: int = 0, instances: int = 5, step: float = 1e-6) -> CheckResult:
    """Analytic gradient against central differences on every coordinate."""
    rng = np.random.default_rng(seed)
    total = 0
    good = 0
    for _ in range(instances):
        generators = _random_generators(rng, 8, 24)
        points = rng.uniform(-0.5, 0.5, size=(60, 3))
        k = len(generators)
        _, analytic = voroloss_with_grad(points, generators, k)

        for index in np.ndindex(generators.positions.shape):
            plus = generators.positions.copy()
            minus = generators.positions.copy()
            plus[index] += step
            minus[index] -= step
            forward = voroloss(points, generators.with_positions(plus), k)
            backward = voroloss(points, generators.with_positions(minus), k)
            numeric = (forward - backward) / (2.0 * step)
            a = analytic[index]
            total += 1
            good += int(abs(a - numeric) <= 1e-5 * max(abs(a), abs(numeric)) + 1e-8)

    ratio = good / max(total, 1)
    return CheckResult("gradient", ratio >= 0.99, f"{good}/{total} coordinates within tolerance")


def check_volume_conservation(seed: int = 0, instances: int = 5, probes: int = 2000) -> CheckResult:
    """Cell volumes sum to the box volume and cells contain exactly their nearest probes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    misplaced = 0
    for _ in range(instances):
        generators = _random_generators(rng, 10, 120)
        diagram = compute_diagram(generators, ClipBox.default())
        worst = max(worst, abs(float(diagram.cell_volumes().sum()) - diagram.box.volume) / diagram.box.volume)

        points = rng.uniform(diagram.box.lo, diagram.box.hi, size=(probes, 3))
        distances, nearest = build_index(generators).query(points, 2)
        for n, p in enumerate(points):
            i, j = int(nearest[n, 0]), int(nearest[n, 1])
            if not cell_contains(diagram, i, p)[0]:
                misplaced += 1
            elif distances[n, 1] - distances[n, 0] > 1e-9 and cell_contains(diagram, j, p, tolerance=-1e-9)[0]:
                misplaced += 1

    passed = worst <= 1e-6 and misplaced == 0
    detail = f"max relative volume error {worst:.3g}, {misplaced} misplaced probes"
    return CheckResult("volume_conservation", passed, detail)


def check_watertight_property(seed: int = 0, instances: int = 20) -> CheckResult:
    """Random generators and random occupancy always give a watertight surface."""
    rng = np.random.default_rng(seed)
    failures = 0
    volume_error = 0.0
    for _ in range(instances):
        generators = _random_generators(rng, 20, 200)
        diagram = compute_diagram(generators)
        occupancy = force_clipped_outside(diagram, rng.random(len(generators)) < 0.5)
        surface = repair_nonmanifold(extract_voromesh(diagram, occupancy))
        if len(surface.faces) == 0:
            continue
        if not check_watertight(surface).watertight:
            failures += 1
        inside_volume = float(diagram.cell_volumes()[occupancy].sum())
        volume_error = max(volume_error, abs(surface_volume(surface) - inside_volume) / inside_volume)

    passed = failures == 0 and volume_error <= 1e-6
    return CheckResult("watertight_property", passed, f"{failures} non-watertight, max volume error {volume_error:.3g}")


def check_smoke_pipeline(seed: int = 0, grid_resolution: int = 8, steps: int = 20) -> CheckResult:
    """Fit and extract a coarse icosphere end to end."""
    mesh, _ = normalize(icosphere(2))
    samples = sample_surface(mesh, default_sample_count(grid_resolution), seed)
    config = FitConfig(grid_resolution=grid_resolution, steps=steps, seed=seed)
    result = fit(samples, init_generators(samples, grid_resolution), config)
    diagram = compute_diagram(result.generators)
    occupancy = assign_occupancy(diagram, mesh)
    report = check_watertight(repair_nonmanifold(extract_voromesh(diagram, occupancy)))
    return CheckResult("smoke_pipeline", report.watertight, f"{report.faces} faces, watertight={report.watertight}")


def run_selfcheck(seed: int = 0, loss_fn: LossFn = voroloss, smoke: bool = True) -> SelfCheckReport:
    """Run every check with the given seed.

    Args:
        seed: Seed shared by all checks
        loss_fn: Loss evaluated against the diagram oracle
        smoke: Include the end-to-end icosphere run

    Returns:
        SelfCheckReport with one result per check
    """
    checks: list[tuple[str, Callable[[], CheckResult]]] = [
        ("closest_face", lambda: check_closest_face(seed, loss_fn=loss_fn)),
        ("gradient", lambda: check_gradient(seed)),
        ("volume_conservation", lambda: check_volume_conservation(seed)),
        ("watertight_property", lambda: check_watertight_property(seed)),
    ]
    if smoke:
        checks.append(("smoke_pipeline", lambda: check_smoke_pipeline(seed)))

    report = SelfCheckReport(seed=seed)
    for name, check in checks:
        started = time.perf_counter()
        try:
            result = check()
        except VoroMeshError as e:
            result = CheckResult(name, False, f"raised {type(e).__name__}: {e}")
        result.seconds = time.perf_counter() - started
        logger.info("selfcheck_result", check=name, passed=result.passed, detail=result.detail, seconds=result.seconds)
        report.results.append(result)
    return report
