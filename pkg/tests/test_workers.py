"""
Tests for the background prefetch thread.
"""

import pytest

from src.sumix.infrastructure.workers import PrefetchThread, prefetch


def _failing_source():
    yield 1
    yield 2
    raise RuntimeError("source broke")


class TestPrefetchThread:
    """Order, errors and cancellation."""

    def test_items_keep_their_order(self):
        assert list(PrefetchThread(range(50), depth=3)) == list(range(50))

    def test_source_error_is_reraised_after_items(self):
        received = []
        with pytest.raises(RuntimeError, match="source broke"):
            for item in PrefetchThread(_failing_source()):
                received.append(item)
        assert received == [1, 2]

    def test_progress_callback(self):
        calls = []
        list(PrefetchThread(range(4), progress_callback=lambda *args: calls.append(args), total=4))
        assert [c[0] for c in calls] == [1, 2, 3, 4]
        assert all(c[1] == 4 for c in calls)

    def test_early_break_stops_the_worker(self):
        worker = PrefetchThread(iter(range(10_000)), depth=1)
        for item in worker:
            if item == 3:
                break
        worker.join(timeout=5)
        assert not worker.is_alive()

    def test_rejects_zero_depth(self):
        with pytest.raises(ValueError):
            PrefetchThread([], depth=0)

    def test_empty_source(self):
        assert list(PrefetchThread([])) == []


def test_depth_zero_is_passthrough():
    source = [1, 2, 3]
    assert prefetch(source, 0) is source


def test_positive_depth_wraps():
    wrapped = prefetch([1, 2, 3], 2)
    assert isinstance(wrapped, PrefetchThread)
    assert list(wrapped) == [1, 2, 3]
