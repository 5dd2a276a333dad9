"""
Executor configuration for batch work
"""
from concurrent.futures import Executor, Future, ProcessPoolExecutor
from typing import Optional

import structlog

from entdim.deps import settings

logger = structlog.get_logger(__name__)


class SerialExecutor(Executor):
    """Runs every submitted call immediately in the calling process"""

    def submit(self, fn, /, *args, **kwargs) -> Future:
        future: Future = Future()
        try:
            future.set_result(fn(*args, **kwargs))
        except BaseException as e:
            future.set_exception(e)
        return future


def create_executor(max_workers: Optional[int] = None) -> Executor:
    """
    Process pool for max_workers > 1, in-process serial executor otherwise.
    Each worker process solves its own programs; nothing is shared between them.
    """
    workers = settings.bench_workers if max_workers is None else max_workers
    if workers is not None and workers > 1:
        logger.info("executor_created", kind="process", workers=workers)
        return ProcessPoolExecutor(max_workers=workers)
    return SerialExecutor()
