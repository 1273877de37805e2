#!/usr/bin/env python3
"""
Parallel runner tests
"""
import asyncio
import threading
import time

import pytest

from carbonforge.core.runner import ParallelRunner, run_parallel


def _square(x: int) -> int:
    return x * x


class TestParallelRunner:
    """Test the pool-backed runner"""

    @pytest.mark.asyncio
    async def test_runner_start_stop(self):
        runner = ParallelRunner(max_workers=2)
        await runner.start()
        assert runner.running
        await runner.stop()
        assert not runner.running

    @pytest.mark.asyncio
    async def test_submit_single_job(self):
        async with ParallelRunner(max_workers=2) as runner:
            result = await runner.submit(lambda x: f"processed_{x}", "chunk")
        assert result == "processed_chunk"

    @pytest.mark.asyncio
    async def test_submit_before_start_fails(self):
        runner = ParallelRunner(max_workers=2)
        with pytest.raises(RuntimeError):
            await runner.submit(_square, 3)

    @pytest.mark.asyncio
    async def test_coroutine_jobs_run_on_the_loop(self):
        async def handler(x: int) -> int:
            await asyncio.sleep(0)
            return x + 1

        runner = ParallelRunner(max_workers=2)
        assert await runner.submit(handler, 1) == 2

    @pytest.mark.asyncio
    async def test_map_keeps_input_order(self):
        def slow_first(x: int) -> int:
            time.sleep(0.02 if x == 0 else 0.0)
            return x

        async with ParallelRunner(max_workers=4) as runner:
            results = await runner.map_ordered(slow_first, range(8))
        assert results == list(range(8))

    def test_rejects_zero_workers(self):
        with pytest.raises(ValueError):
            ParallelRunner(max_workers=0)


class TestRunParallel:
    """Test the synchronous wrapper"""

    def test_inline_when_single_worker(self):
        threads = set()

        def record(x: int) -> int:
            threads.add(threading.get_ident())
            return x

        assert run_parallel(record, [1, 2, 3], max_workers=1) == [1, 2, 3]
        assert threads == {threading.get_ident()}

    def test_threads_match_inline(self):
        items = list(range(20))
        assert run_parallel(_square, items, max_workers=4) == [x * x for x in items]

    def test_empty_input(self):
        assert run_parallel(_square, [], max_workers=4) == []

    @pytest.mark.slow
    def test_processes_match_inline(self):
        items = list(range(10))
        assert run_parallel(_square, items, max_workers=2, use_processes=True) == [x * x for x in items]
