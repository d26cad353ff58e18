import logging
import typing
from functools import partial

import anyio

logger = logging.getLogger("simpleray.error")

T = typing.TypeVar("T")
R = typing.TypeVar("R")


async def gather(
    func: typing.Callable[[T], R],
    items: typing.Sequence[T],
    limiter: typing.Optional[anyio.CapacityLimiter] = None,
) -> typing.List[R]:
    """Run ``func`` over ``items`` in worker threads, keeping input order."""
    results: typing.List[typing.Any] = [None] * len(items)

    async def run(index: int, item: T) -> None:
        results[index] = await anyio.to_thread.run_sync(partial(func, item), limiter=limiter)

    async with anyio.create_task_group() as task_group:
        for index, item in enumerate(items):
            task_group.start_soon(run, index, item)
    return results


def parallel_map(func: typing.Callable[[T], R], items: typing.Sequence[T], threads: int = 1) -> typing.List[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    async def main() -> typing.List[R]:
        return await gather(func, items, anyio.CapacityLimiter(threads))

    logger.debug("Fanning %d items out to %d threads.", len(items), threads)
    return anyio.run(main)
