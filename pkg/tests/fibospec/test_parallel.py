"""Tests for the parallel module."""

import numpy as np
import pytest

from fibospec.parallel import SERIAL, ParallelMap, task_rng


class TestParallelMap:
    """Test the ordered parallel map."""

    def test_serial_map(self):
        """Test mapping in the calling thread."""
        assert SERIAL(lambda x: x * x, range(5)) == [0, 1, 4, 9, 16]

    def test_parallel_map_keeps_order(self):
        """Test that results come back in item order."""
        pmap = ParallelMap(4)
        assert pmap(lambda x: -x, range(100)) == [-x for x in range(100)]

    def test_parallel_map_empty(self):
        """Test mapping over no items."""
        assert ParallelMap(3)(str, []) == []

    def test_invalid_worker_count(self):
        """Test that a pool needs at least one worker."""
        with pytest.raises(ValueError):
            ParallelMap(0)

    def test_results_independent_of_workers(self):
        """Test that seeded tasks give the same results for any pool size."""

        def draw(index):
            return task_rng(42, index).standard_normal(3).tolist()

        assert ParallelMap(1)(draw, range(8)) == ParallelMap(4)(draw, range(8))


class TestTaskRng:
    """Test the per-task random streams."""

    def test_same_seed_and_index(self):
        """Test that a stream is reproducible."""
        a = task_rng(7, 3).random(4)
        b = task_rng(7, 3).random(4)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        """Test that different indices and seeds give different streams."""
        base = task_rng(7, 3).random(4)
        assert not np.array_equal(base, task_rng(7, 4).random(4))
        assert not np.array_equal(base, task_rng(8, 3).random(4))
