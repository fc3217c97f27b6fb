"""Order-preserving thread fan-out for per-instance work."""

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
import contextvars
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply ``func`` to every item, returning results in input order.

    Each task runs inside its own copy of the caller's context so the run
    correlation id reaches worker threads. With one worker the map runs inline.
    """
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    contexts = [contextvars.copy_context() for _ in items]

    def run(task: tuple[contextvars.Context, T]) -> R:
        context, item = task
        return context.run(func, item)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, zip(contexts, items, strict=True)))
