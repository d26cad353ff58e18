import threading

import anyio
import pytest

from simpleray.concurrency import gather, parallel_map


@pytest.mark.anyio
async def test_gather_keeps_input_order() -> None:
    results = await gather(lambda x: x * x, [3, 1, 2], anyio.CapacityLimiter(2))
    assert results == [9, 1, 4]


@pytest.mark.anyio
async def test_gather_of_nothing() -> None:
    assert await gather(str, []) == []


@pytest.mark.parametrize("threads", [1, 4])
def test_parallel_map(threads: int) -> None:
    assert parallel_map(lambda x: x + 1, range(10), threads=threads) == list(range(1, 11))


def test_single_thread_stays_on_the_caller() -> None:
    caller = threading.get_ident()
    assert set(parallel_map(lambda _: threading.get_ident(), [0, 1, 2])) == {caller}
