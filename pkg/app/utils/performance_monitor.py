# ABOUTME: Wall-clock timing helpers for training iterations and oracle checks
# ABOUTME: Context-manager timers whose readings feed iteration records and performance logs

from collections.abc import Generator
from contextlib import contextmanager
import time


class ResponseTimer:
    """Timer for measuring elapsed time."""

    def __init__(self) -> None:
        self.start_time: float | None = None
        self.end_time: float | None = None

    def start(self) -> None:
        self.start_time = time.perf_counter()
        self.end_time = None

    def stop(self) -> None:
        self.end_time = time.perf_counter()

    def get_elapsed_time(self) -> float:
        """Seconds between start and stop (or now, while running)."""
        if self.start_time is None:
            return 0.0
        end = self.end_time if self.end_time is not None else time.perf_counter()
        return end - self.start_time

    @property
    def elapsed_ms(self) -> float:
        return self.get_elapsed_time() * 1000.0


@contextmanager
def measure_time() -> Generator[ResponseTimer, None, None]:
    """Time the enclosed block; the yielded timer is stopped on exit."""
    timer = ResponseTimer()
    timer.start()
    try:
        yield timer
    finally:
        timer.stop()
