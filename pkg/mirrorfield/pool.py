from typing import Any, Callable, Iterable, Optional
from collections import deque
from threading import Condition, RLock, Thread
import logging
import os

THREADS_ENV_VAR = "MIRRORFIELD_THREADS"


def defaultPoolSize() -> int:
    """Number of workers to use when none is given explicitly: the value of the
    MIRRORFIELD_THREADS environment variable if set, the CPU count otherwise

    Returns:
        int: A pool size of at least 1
    """
    value = os.environ.get(THREADS_ENV_VAR)
    if value is not None and value.strip() != "":
        try:
            poolSize = int(value)
        except ValueError as ex:
            raise ValueError(
                f"{THREADS_ENV_VAR} must be a positive integer, got '{value}'"
            ) from ex
        if poolSize < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be at least 1, got {poolSize}")
        return poolSize
    return max(1, os.cpu_count() or 1)


class WorkItem:
    """A single call scheduled on a WorkerPool. Its result (or the exception it
    raised) is kept until the caller collects it"""

    def __init__(self, index: int, fn: Callable, arg: Any):
        self.index = index
        self.fn = fn
        self.arg = arg
        self.result: Any = None
        self.exception: "BaseException|None" = None
        self._lock = RLock()
        self._finishedCondition = Condition(self._lock)
        self._isFinished = False

    def execute(self):
        try:
            self.result = self.fn(self.arg)
        except Exception as ex:  # pylint: disable=broad-exception-caught
            self.exception = ex
        self.finish()

    def finish(self):
        with self._lock:
            self._isFinished = True
            self._finishedCondition.notify_all()

    def wait(self, timeout: "float|None" = None):
        with self._lock:
            while not self._isFinished:
                self._finishedCondition.wait(timeout)

    def isFinished(self):
        with self._lock:
            return self._isFinished


class WorkQueue:
    """FIFO queue of WorkItems shared by the daemons of a pool"""

    def __init__(self):
        self._lock = RLock()
        self._waitingItems: "deque[WorkItem]" = deque()
        self._moreItemsOrStoppingCondition = Condition(self._lock)
        self._isStopping = False

    def addWaiting(self, item: WorkItem):
        with self._lock:
            self._waitingItems.append(item)
            self._moreItemsOrStoppingCondition.notify()

    def onWaitingToActive(self) -> Optional[WorkItem]:
        """Block until an item is available and hand it out. Returns None once the
        queue is stopping and drained"""
        with self._lock:
            while True:
                if len(self._waitingItems) > 0:
                    return self._waitingItems.popleft()
                if self._isStopping:
                    return None
                self._moreItemsOrStoppingCondition.wait()

    def stop(self):
        with self._lock:
            self._isStopping = True
            self._moreItemsOrStoppingCondition.notify_all()


class PoolDaemon(Thread):
    def __init__(self, queue: WorkQueue):
        super().__init__()
        self.daemon = True
        self.queue = queue

    def run(self) -> None:
        logging.debug("Started PoolDaemon")
        while True:
            item = self.queue.onWaitingToActive()
            if item is None:
                logging.debug("Stopped PoolDaemon")
                return
            item.execute()


class WorkerPool:
    """A fixed pool of daemon threads evaluating a function over a list of work
    items. Results are returned in item order, so the outcome never depends on the
    number of workers or on scheduling. With a pool size of 1 the items are
    evaluated inline in the calling thread.

    numpy releases the GIL inside its vectorised kernels, which is where the
    renderer and the trainer spend their time.

    Args:
        poolSize (int, optional): Number of worker threads. Defaults to the value
            of the MIRRORFIELD_THREADS environment variable, or the CPU count
    """

    def __init__(self, poolSize: "int|None" = None):
        self.poolSize = defaultPoolSize() if poolSize is None else int(poolSize)
        if self.poolSize < 1:
            raise ValueError(f"poolSize must be at least 1, got {self.poolSize}")
        self.closed = False
        self.queue = WorkQueue()
        self.pool: "list[PoolDaemon]" = []
        if self.poolSize > 1:
            self.pool = [PoolDaemon(self.queue) for i in range(self.poolSize)]
            for daemon in self.pool:
                daemon.start()

    def map(self, fn: Callable, items: Iterable) -> list:
        """Evaluate fn on every item and return the results in order. The first
        exception raised by an item (in item order) is re-raised here.
        """
        if self.closed:
            raise RuntimeError("WorkerPool is closed")
        workItems = [WorkItem(i, fn, arg) for i, arg in enumerate(items)]
        if len(self.pool) == 0:
            for item in workItems:
                item.execute()
        else:
            for item in workItems:
                self.queue.addWaiting(item)
            for item in workItems:
                item.wait()
        for item in workItems:
            if item.exception is not None:
                raise item.exception
        return [item.result for item in workItems]

    def close(self):
        if not getattr(self, "closed", True):
            self.queue.stop()
            for daemon in self.pool:
                daemon.join()
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *excInfo):
        self.close()

    def __del__(self):
        self.close()
