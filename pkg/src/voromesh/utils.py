"""Utility functions for voromesh."""

import os
import re
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar


T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV_VAR = "VOROMESH_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Resolve the worker thread count.

    Args:
        threads: Requested thread count. 0 means all cores. None falls back to the
            VOROMESH_THREADS environment variable, then to 1.

    Returns:
        Number of worker threads (>= 1)
    """
    if threads is None:
        env_value = os.getenv(THREADS_ENV_VAR)
        if env_value is None or not env_value.strip():
            return 1
        try:
            threads = int(env_value)
        except ValueError as e:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got '{env_value}'") from e

    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    if threads == 0:
        return os.cpu_count() or 1
    return threads


def chunk_ranges(total: int, chunk_size: int) -> list[tuple[int, int]]:
    """Split range(total) into consecutive [start, stop) chunks."""
    if chunk_size <= 0:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Map fn over items, preserving order. Runs inline when threads == 1."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


def parse_int_set(value: str | Sequence[int] | None) -> tuple[int, ...]:
    """Parse a step list like '80,120,200,250' or '80 120' into sorted unique ints.

    Args:
        value: String, sequence of ints, or None

    Returns:
        Sorted tuple of unique integers (empty for None or an empty string)
    """
    if value is None:
        return ()

    if isinstance(value, str):
        tokens = re.findall(r"-?\d+", value)
        leftover = re.sub(r"-?\d+|[\s,;]", "", value)
        if leftover:
            raise ValueError(f"Invalid integer list: '{value}'")
        numbers = [int(token) for token in tokens]
    else:
        numbers = [int(v) for v in value]

    return tuple(sorted(set(numbers)))
