"""Configuration file loader for voromesh CLI."""

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import structlog
import yaml

from voromesh.errors import ConfigError
from voromesh.metrics import DEFAULT_F1_DELTA, DEFAULT_METRIC_SAMPLES
from voromesh.optimizer import FitConfig
from voromesh.sampling import default_sample_count


logger = structlog.get_logger()

DEFAULT_OUT = Path("voromesh_run")

# Flat config-file keys, mirroring the long flag names
KNOWN_KEYS = {
    "input",
    "out",
    "grid",
    "samples",
    "steps",
    "lr",
    "halving_steps",
    "minibatch",
    "k",
    "lambda",
    "seed",
    "threads",
    "metric_samples",
    "metric_seed",
    "delta",
    "dump_samples",
    "dump_diagram",
}


def load_config(config_path: Path | str) -> dict[str, Any]:
    """Load configuration from a YAML or JSON file.

    JSON is read through the YAML parser, so both formats use the same flat keys.

    Args:
        config_path: Path to the configuration file

    Returns:
        Dictionary containing the configuration

    Raises:
        SystemExit: If the file cannot be read or parsed
    """
    config_path = Path(config_path)

    if not config_path.exists():
        print(f"Error: Configuration file not found: {config_path}", file=sys.stderr)
        sys.exit(1)

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f)

        if config is None:
            return {}

        if not isinstance(config, dict):
            print(f"Error: Configuration file must contain a mapping of flag names: {config_path}", file=sys.stderr)
            sys.exit(1)

        unknown = sorted(set(config) - KNOWN_KEYS)
        if unknown:
            logger.warning("config_unknown_keys", path=str(config_path), keys=unknown)
        return config

    except yaml.YAMLError as e:
        print(f"Error: Failed to parse configuration file: {config_path}", file=sys.stderr)
        print(f"  {e}", file=sys.stderr)
        sys.exit(1)
    except OSError as e:
        print(f"Error: Failed to read configuration file: {config_path}", file=sys.stderr)
        print(f"  {e}", file=sys.stderr)
        sys.exit(1)


def merge_config_with_defaults(config: dict[str, Any], cli_values: dict[str, Any]) -> dict[str, Any]:
    """Merge configuration from file with CLI arguments.

    CLI arguments take precedence over config file values.

    Args:
        config: Configuration loaded from file
        cli_values: Values provided via CLI (None values are ignored)

    Returns:
        Merged configuration dictionary
    """
    result = config.copy()

    for key, value in cli_values.items():
        if value is not None:
            result[key] = value

    return result


@dataclass
class PipelineConfig:
    """Resolved options of the fit / extract / pipeline commands."""

    fit: FitConfig
    input: Path | None = None
    out: Path = DEFAULT_OUT
    samples: int | None = None
    metric_samples: int = DEFAULT_METRIC_SAMPLES
    metric_seed: int | None = None
    delta: float = DEFAULT_F1_DELTA
    dump_samples: bool = False
    dump_diagram: bool = False

    def __post_init__(self) -> None:
        if self.samples is not None and self.samples < 1:
            raise ConfigError(f"samples must be positive, got {self.samples}")
        if self.metric_samples < 1:
            raise ConfigError(f"metric_samples must be positive, got {self.metric_samples}")
        if not self.delta > 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")

    @property
    def sample_count(self) -> int:
        return self.samples if self.samples is not None else default_sample_count(self.fit.grid_resolution)

    @property
    def evaluation_seed(self) -> int:
        return self.metric_seed if self.metric_seed is not None else self.fit.seed

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": None if self.input is None else str(self.input),
            "out": str(self.out),
            "samples": self.sample_count,
            "metric_samples": self.metric_samples,
            "metric_seed": self.evaluation_seed,
            "delta": self.delta,
            "threads": self.fit.threads,
            **self.fit.to_dict(),
        }


def _typed(merged: dict[str, Any], key: str, kind: type, default: Any) -> Any:
    value = merged.get(key, default)
    if value is None:
        return None
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key} must be {kind.__name__}, got {value!r}") from e


def build_pipeline_config(merged: dict[str, Any]) -> PipelineConfig:
    """Build validated options from merged file and flag values.

    Raises:
        ConfigError: If a value has the wrong type or range
    """
    defaults = FitConfig()
    fit_config = FitConfig(
        grid_resolution=_typed(merged, "grid", int, defaults.grid_resolution),
        steps=_typed(merged, "steps", int, defaults.steps),
        learning_rate=_typed(merged, "lr", float, defaults.learning_rate),
        halving_steps=merged.get("halving_steps", defaults.halving_steps),
        minibatch_fraction=_typed(merged, "minibatch", float, defaults.minibatch_fraction),
        k=_typed(merged, "k", int, defaults.k),
        lambda_=_typed(merged, "lambda", float, defaults.lambda_),
        seed=_typed(merged, "seed", int, defaults.seed),
        threads=_typed(merged, "threads", int, None),
    )
    input_path = merged.get("input")
    return PipelineConfig(
        fit=fit_config,
        input=None if input_path is None else Path(input_path),
        out=Path(merged.get("out", DEFAULT_OUT)),
        samples=_typed(merged, "samples", int, None),
        metric_samples=_typed(merged, "metric_samples", int, DEFAULT_METRIC_SAMPLES),
        metric_seed=_typed(merged, "metric_seed", int, None),
        delta=_typed(merged, "delta", float, DEFAULT_F1_DELTA),
        dump_samples=bool(merged.get("dump_samples", False)),
        dump_diagram=bool(merged.get("dump_diagram", False)),
    )
