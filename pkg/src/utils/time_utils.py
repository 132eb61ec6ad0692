"""
Timing helpers: monotonic stopwatches and summary formatting for the bench and
training reports.
"""

from __future__ import annotations

import statistics
import time
from contextlib import contextmanager
from typing import Iterator, Sequence, Tuple


class Stopwatch:
    """Accumulates elapsed monotonic time over any number of timed sections."""

    def __init__(self) -> None:
        self._total = 0.0

    @contextmanager
    def measure(self) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self._total += time.perf_counter() - start

    def reset(self) -> float:
        """Return the accumulated milliseconds and start again from zero."""
        elapsed = self.elapsed_ms
        self._total = 0.0
        return elapsed

    @property
    def elapsed_ms(self) -> float:
        return self._total * 1000.0


def median_min_max(values: Sequence[float]) -> Tuple[float, float, float]:
    """
    Summarise repeated timings.

    Args:
        values: at least one measurement

    Returns:
        (median, min, max)

    Raises:
        ValueError: empty input
    """
    if not values:
        raise ValueError("no timings to summarise")
    return float(statistics.median(values)), float(min(values)), float(max(values))


def format_ms(milliseconds: float) -> str:
    """Format a duration for log lines, e.g. ``12.3 ms`` or ``4.56 s``."""
    if milliseconds < 1000.0:
        return f"{milliseconds:.1f} ms"
    return f"{milliseconds / 1000.0:.2f} s"
