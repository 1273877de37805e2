"""
Parallel runner for independent jobs.

Thread or process pool driven from asyncio. Results always come back in
input order, whatever order the workers finish in.
"""
from __future__ import annotations

import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Awaitable, Callable, Iterable, List, Optional, TypeVar, Union

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


class ParallelRunner:
    """
    Ordered map over a worker pool

    Use ``use_processes=True`` for CPU-bound jobs whose callables and
    arguments pickle; threads otherwise.
    """

    def __init__(self, max_workers: int = 4, use_processes: bool = False):
        if max_workers < 1:
            raise ValueError("max_workers must be at least 1")
        self.max_workers = max_workers
        self.use_processes = use_processes
        self._executor: Optional[Executor] = None

    @property
    def running(self) -> bool:
        return self._executor is not None

    async def start(self) -> None:
        if self._executor is not None:
            return
        if self.use_processes:
            self._executor = ProcessPoolExecutor(max_workers=self.max_workers)
        else:
            self._executor = ThreadPoolExecutor(max_workers=self.max_workers)
        logger.debug("runner started (%d %s)", self.max_workers,
                     "processes" if self.use_processes else "threads")

    async def stop(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    async def __aenter__(self) -> "ParallelRunner":
        await self.start()
        return self

    async def __aexit__(self, *exc: object) -> None:
        await self.stop()

    async def submit(self, fn: Union[Callable[[T], R], Callable[[T], Awaitable[R]]], item: T) -> R:
        """Run one job; coroutine functions are awaited on the loop itself"""
        if asyncio.iscoroutinefunction(fn):
            return await fn(item)  # type: ignore[misc]
        if self._executor is None:
            raise RuntimeError("runner is not started")
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, fn, item)  # type: ignore[arg-type]

    async def map_ordered(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply ``fn`` to every item concurrently; results in input order"""
        jobs = [asyncio.create_task(self.submit(fn, item)) for item in items]
        return list(await asyncio.gather(*jobs))


def run_parallel(fn: Callable[[T], R], items: Iterable[T], max_workers: int = 1,
                 use_processes: bool = False) -> List[R]:
    """Synchronous ordered map; ``max_workers <= 1`` runs inline"""
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    async def _go() -> List[R]:
        async with ParallelRunner(max_workers, use_processes) as runner:
            return await runner.map_ordered(fn, items)

    return asyncio.run(_go())


__all__ = ["ParallelRunner", "run_parallel"]
