"""Grid initialization of generators and Adam fitting on the VoroLoss."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog
from scipy.spatial import cKDTree

from voromesh.errors import ConfigError, InputDataError, OptimizationError
from voromesh.sampling import SurfacePointSet
from voromesh.utils import parse_int_set
from voromesh.voroloss import DEFAULT_K, MIN_GENERATOR_DISTANCE, GeneratorSet, voroloss, voroloss_with_grad


logger = structlog.get_logger()

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
DUPLICATE_JITTER = 1e-9
FULL_LOSS_EVERY = 100
LOG_EVERY = 50


@dataclass
class FitConfig:
    """Hyperparameters of the direct optimization."""

    grid_resolution: int = 32
    steps: int = 400
    learning_rate: float = 0.005
    halving_steps: tuple[int, ...] = (80, 120, 200, 250)
    minibatch_fraction: float = 0.2
    k: int = DEFAULT_K
    lambda_: float = 0.0
    seed: int = 0
    threads: int | None = 1

    def __post_init__(self) -> None:
        try:
            self.halving_steps = parse_int_set(self.halving_steps)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.grid_resolution < 2:
            raise ConfigError(f"grid_resolution must be >= 2, got {self.grid_resolution}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if any(s < 0 for s in self.halving_steps):
            raise ConfigError(f"halving_steps must be nonnegative, got {self.halving_steps}")
        if not 0.0 < self.minibatch_fraction <= 1.0:
            raise ConfigError(f"minibatch_fraction must be in (0, 1], got {self.minibatch_fraction}")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.lambda_ < 0.0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lambda_}")
        if self.threads is not None and self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")

    @property
    def effective_halving_steps(self) -> tuple[int, ...]:
        """Halving steps that fall inside [0, steps)."""
        return tuple(s for s in self.halving_steps if s < self.steps)

    def to_dict(self) -> dict:
        return {
            "grid_resolution": self.grid_resolution,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "halving_steps": list(self.halving_steps),
            "minibatch_fraction": self.minibatch_fraction,
            "k": self.k,
            "lambda": self.lambda_,
            "seed": self.seed,
        }


def learning_rate_at(step: int, config: FitConfig) -> float:
    """Learning rate halved once for every halving step <= step."""
    halvings = sum(1 for s in config.effective_halving_steps if s <= step)
    return config.learning_rate * 0.5**halvings


def init_generators(samples: SurfacePointSet, grid_resolution: int) -> GeneratorSet:
    """Grid nodes of every voxel of [-0.5, 0.5]^3 that contains a sample.

    Nodes are deduplicated and returned in lexicographic (ix, iy, iz) order.

    Raises:
        InputDataError: If there are no samples
    """
    if len(samples) == 0:
        raise InputDataError("Cannot initialize generators without samples")

    points = samples.points
    clamped = np.clip(points, -0.5, 0.5)
    outside = int(np.count_nonzero(np.any(np.abs(points - clamped) > 1e-12, axis=1)))
    if outside:
        logger.warning("samples_clamped", count=outside)

    g = grid_resolution
    voxels = np.floor((clamped + 0.5) * g).astype(np.int64)
    voxels = np.unique(np.clip(voxels, 0, g - 1), axis=0)

    corners = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64)
    nodes = np.unique((voxels[:, None, :] + corners[None, :, :]).reshape(-1, 3), axis=0)
    positions = nodes / g - 0.5

    logger.info("generators_initialized", voxels=len(voxels), generators=len(nodes), grid_resolution=g)
    return GeneratorSet(positions, positions.copy(), metadata={"grid_resolution": g})


def offset_regularizer(generators: GeneratorSet) -> tuple[float, np.ndarray]:
    """Maximum offset norm max_i |q_i - v_i| and its subgradient.

    The gradient is the unit offset direction on the lowest-index argmax
    generator; it is zero when every offset is zero.
    """
    offsets = generators.positions - generators.initial_positions
    gradient = np.zeros_like(offsets)
    if len(offsets) == 0:
        return 0.0, gradient

    norms = np.linalg.norm(offsets, axis=1)
    winner = int(np.argmax(norms))
    value = float(norms[winner])
    if value > 0.0:
        gradient[winner] = offsets[winner] / value
    return value, gradient


@dataclass
class AdamState:
    """Parameters and Adam moment estimates."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params: np.ndarray) -> "AdamState":
        params = np.array(params, dtype=np.float64)
        return cls(params=params, m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(state: AdamState, gradient: np.ndarray, lr: float) -> AdamState:
    """One bias-corrected Adam update (beta1=0.9, beta2=0.999, eps=1e-8).

    Raises:
        InputDataError: If the gradient shape does not match the parameters
        OptimizationError: If the gradient is not finite
    """
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != state.params.shape:
        raise InputDataError(f"Gradient shape {gradient.shape} does not match parameters {state.params.shape}")
    if not np.all(np.isfinite(gradient)):
        raise OptimizationError(f"Non-finite gradient at Adam step {state.t + 1}")

    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * gradient
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * (gradient * gradient)
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    params = state.params - (lr / bc1) * m / (np.sqrt(v / bc2) + ADAM_EPSILON)
    return AdamState(params=params, m=m, v=v, t=t)


def separate_duplicates(positions: np.ndarray, seed: int = 0, jitter: float = DUPLICATE_JITTER) -> np.ndarray:
    """Jitter generators within MIN_GENERATOR_DISTANCE of an earlier one by up to `jitter` per axis."""
    positions = np.array(positions, dtype=np.float64)
    rng = np.random.default_rng(seed)
    moved = 0

    for _ in range(10):
        pairs = cKDTree(positions).query_pairs(MIN_GENERATOR_DISTANCE, output_type="ndarray")
        duplicates = np.unique(pairs.max(axis=1)) if len(pairs) else np.zeros(0, dtype=np.int64)
        if len(duplicates) == 0:
            break
        positions[duplicates] += rng.uniform(-jitter, jitter, size=(len(duplicates), 3))
        moved += len(duplicates)

    if moved:
        logger.warning("duplicate_generators_jittered", count=moved, jitter=jitter)
    return positions


@dataclass
class TraceRow:
    step: int
    lr: float
    minibatch_loss: float | None
    full_loss: float | None = None


@dataclass
class FitResult:
    """Fitted generators with the per-step loss trace."""

    generators: GeneratorSet
    trace: list[TraceRow] = field(default_factory=list)

    def full_losses(self) -> dict[int, float]:
        return {row.step: row.full_loss for row in self.trace if row.full_loss is not None}


def _full_loss(samples: SurfacePointSet, positions: np.ndarray, template: GeneratorSet, config: FitConfig) -> float:
    return voroloss(samples.points, template.with_positions(positions), config.k, config.threads) / len(samples)


def fit(
    samples: SurfacePointSet,
    initial: GeneratorSet,
    config: FitConfig,
    full_loss_every: int | None = FULL_LOSS_EVERY,
) -> FitResult:
    """Minimize VoroLoss/batch + lambda * R(Q) with Adam over seeded minibatches.

    Each step draws a fresh minibatch of ceil(fraction * |X|) samples without
    replacement. The full-set mean VoroLoss is recorded every `full_loss_every`
    steps and after the last step.

    Raises:
        InputDataError: On empty inputs or an empty minibatch
        OptimizationError: If the loss or gradient becomes non-finite
    """
    if len(initial) == 0:
        raise InputDataError("Cannot fit zero generators")
    if len(samples) == 0:
        raise InputDataError("Cannot fit to zero samples")

    batch_size = math.ceil(config.minibatch_fraction * len(samples))
    if batch_size < 1:
        raise InputDataError("minibatch_fraction * |X| must be at least 1")

    rng = np.random.default_rng(config.seed)
    state = AdamState.fresh(initial.positions)
    trace: list[TraceRow] = []

    logger.info(
        "fit_started",
        generators=len(initial),
        samples=len(samples),
        batch_size=batch_size,
        steps=config.steps,
        learning_rate=config.learning_rate,
    )

    for step in range(config.steps):
        lr = learning_rate_at(step, config)
        current = initial.with_positions(state.params)

        batch = samples.points[rng.choice(len(samples), size=batch_size, replace=False)]
        loss, gradient = voroloss_with_grad(batch, current, config.k, config.threads)
        loss /= batch_size
        gradient /= batch_size

        if config.lambda_ > 0.0:
            reg_value, reg_gradient = offset_regularizer(current)
            loss += config.lambda_ * reg_value
            gradient += config.lambda_ * reg_gradient

        if not math.isfinite(loss):
            raise OptimizationError(f"Non-finite loss at step {step}")

        full = None
        if full_loss_every and step % full_loss_every == 0:
            full = _full_loss(samples, state.params, initial, config)
        trace.append(TraceRow(step=step, lr=lr, minibatch_loss=loss, full_loss=full))

        if step % LOG_EVERY == 0:
            logger.info("fit_step", step=step, lr=lr, loss=loss, full_loss=full)
        else:
            logger.debug("fit_step", step=step, lr=lr, loss=loss)

        state = adam_step(state, gradient, lr)

    positions = state.params
    if config.steps > 0:
        if full_loss_every:
            final = _full_loss(samples, positions, initial, config)
            last_lr = learning_rate_at(config.steps, config)
            trace.append(TraceRow(step=config.steps, lr=last_lr, minibatch_loss=None, full_loss=final))
            logger.info("fit_finished", steps=config.steps, full_loss=final)
        positions = separate_duplicates(positions, seed=config.seed)

    return FitResult(generators=initial.with_positions(positions), trace=trace)


def write_loss_trace(result: FitResult, path: Path | str) -> None:
    """Write the loss trace as CSV (step, lr, minibatch_loss, full_loss)."""
    with open(Path(path), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "lr", "minibatch_loss", "full_loss"])
        for row in result.trace:
            writer.writerow(
                [
                    row.step,
                    repr(row.lr),
                    "" if row.minibatch_loss is None else repr(row.minibatch_loss),
                    "" if row.full_loss is None else repr(row.full_loss),
                ]
            )
