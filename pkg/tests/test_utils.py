"""Tests for voromesh.utils module."""

import os

import pytest

from voromesh.utils import THREADS_ENV_VAR, chunk_ranges, parallel_map, parse_int_set, resolve_threads


class TestResolveThreads:
    """Tests for resolve_threads function."""

    def test_explicit_count(self) -> None:
        """Test that an explicit positive count is returned as is."""
        assert resolve_threads(1) == 1
        assert resolve_threads(4) == 4

    def test_zero_means_all_cores(self) -> None:
        """Test that 0 resolves to the CPU count."""
        assert resolve_threads(0) == (os.cpu_count() or 1)

    def test_negative_rejected(self) -> None:
        """Test that a negative count raises ValueError."""
        with pytest.raises(ValueError, match="threads must be >= 0"):
            resolve_threads(-1)

    def test_none_defaults_to_one(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that None without the environment variable gives one thread."""
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert resolve_threads(None) == 1

    def test_none_reads_environment(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that None falls back to VOROMESH_THREADS."""
        monkeypatch.setenv(THREADS_ENV_VAR, "3")
        assert resolve_threads(None) == 3

    def test_invalid_environment_value(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that a non-integer VOROMESH_THREADS raises ValueError."""
        monkeypatch.setenv(THREADS_ENV_VAR, "many")
        with pytest.raises(ValueError, match=THREADS_ENV_VAR):
            resolve_threads(None)


class TestChunkRanges:
    """Tests for chunk_ranges function."""

    def test_even_split(self) -> None:
        assert chunk_ranges(6, 3) == [(0, 3), (3, 6)]

    def test_uneven_split(self) -> None:
        assert chunk_ranges(7, 3) == [(0, 3), (3, 6), (6, 7)]

    def test_empty(self) -> None:
        assert chunk_ranges(0, 5) == []

    def test_invalid_chunk_size(self) -> None:
        with pytest.raises(ValueError):
            chunk_ranges(10, 0)


class TestParallelMap:
    """Tests for parallel_map function."""

    def test_preserves_order_inline(self) -> None:
        assert parallel_map(lambda x: x * x, range(5), threads=1) == [0, 1, 4, 9, 16]

    def test_preserves_order_threaded(self) -> None:
        assert parallel_map(lambda x: x * x, range(50), threads=4) == [x * x for x in range(50)]


class TestParseIntSet:
    """Tests for parse_int_set function."""

    def test_comma_separated(self) -> None:
        assert parse_int_set("80,120,200,250") == (80, 120, 200, 250)

    def test_space_separated_unsorted_with_duplicates(self) -> None:
        assert parse_int_set("200 80 80 120") == (80, 120, 200)

    def test_sequence(self) -> None:
        assert parse_int_set([250, 80]) == (80, 250)

    def test_empty(self) -> None:
        assert parse_int_set(None) == ()
        assert parse_int_set("") == ()

    def test_invalid_token(self) -> None:
        with pytest.raises(ValueError, match="Invalid integer list"):
            parse_int_set("80,abc")
