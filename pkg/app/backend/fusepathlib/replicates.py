import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, TypeVar

from rich.progress import Progress

logger = logging.getLogger("fusepath")

T = TypeVar("T")


def run_replicates(
    task: Callable[[int], T],
    count: int,
    threads: int = 1,
    description: str = "Replicates",
    show_progress: bool = False,
) -> list[T]:
    """
    Runs task(0), ..., task(count - 1) on up to `threads` worker threads and returns the results in
    replicate order. Every task derives its own random stream from its index, so results do not
    depend on scheduling.
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    threads = max(1, min(threads, count or 1))
    results: list = [None] * count
    with Progress(disable=not show_progress, transient=True) as progress:
        progress_task = progress.add_task(description, total=count)
        if threads == 1:
            for index in range(count):
                results[index] = task(index)
                progress.advance(progress_task)
            return results
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(task, index): index for index in range(count)}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                progress.advance(progress_task)
    logger.debug("Finished %d replicates of %s on %d threads", count, description, threads)
    return results
