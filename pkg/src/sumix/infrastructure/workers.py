"""
Background batch prefetching.

PrefetchThread drains an iterator on a daemon thread into a bounded queue so
that augmentation and mixing can overlap with the optimizer step. Items come
out in the order the iterator produced them; an exception raised by the
iterator is re-raised in the consuming thread.
"""

import queue
import threading
from typing import Callable, Iterable, Iterator, Optional, TypeVar

from .logging_config import get_logger

logger = get_logger(__name__)

T = TypeVar("T")

_DONE = object()


class PrefetchThread(threading.Thread):
    """
    Worker thread filling a bounded queue from an iterable.

    Iterate over the thread object itself to consume the items.
    """

    def __init__(
        self,
        source: Iterable[T],
        depth: int = 2,
        progress_callback: Optional[Callable[[int, int, str], None]] = None,
        total: int = 0,
    ):
        """
        Initialize the worker.

        Args:
            source: Iterable producing the items (e.g. batches of one epoch).
            depth: Maximum number of ready items held in memory.
            progress_callback: Optional callback(current, total, message) per produced item.
            total: Expected item count, forwarded to the callback.
        """
        super().__init__(daemon=True)
        if depth < 1:
            raise ValueError(f"Prefetch depth must be >= 1, got {depth}")
        self._source = source
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._progress_callback = progress_callback
        self._total = total
        self._cancelled = threading.Event()
        self._error: Optional[BaseException] = None

    def run(self):
        """Produce items until the source is exhausted or the consumer cancels."""
        produced = 0
        try:
            for item in self._source:
                if not self._put(item):
                    return
                produced += 1
                if self._progress_callback is not None:
                    self._progress_callback(produced, self._total, "prefetched")
        except BaseException as e:
            logger.error(f"Error in prefetch thread: {e}", exc_info=True)
            self._error = e
        finally:
            self._put(_DONE)

    def _put(self, item) -> bool:
        while not self._cancelled.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def cancel(self):
        """Stop producing; pending items are discarded."""
        self._cancelled.set()
        logger.debug("Prefetch cancelled")

    def __iter__(self) -> Iterator[T]:
        if not self.is_alive() and self.ident is None:
            self.start()
        try:
            while True:
                item = self._queue.get()
                if item is _DONE:
                    break
                yield item
        finally:
            self.cancel()
        if self._error is not None:
            raise self._error


def prefetch(source: Iterable[T], depth: int) -> Iterable[T]:
    """Wrap source in a PrefetchThread, or return it unchanged when depth is 0."""
    if depth <= 0:
        return source
    return PrefetchThread(source, depth=depth)
