import functools
import os
import tempfile
import time
from collections.abc import Callable
from collections.abc import Sequence
from pathlib import Path
from typing import Any
from typing import TypeVar

import numpy as np
from joblib import Parallel
from joblib import delayed

from app.logger import get_logger

logger = get_logger("xva.performance")

T = TypeVar("T")


def timing_decorator(func: Callable) -> Callable:
    """Decorator to measure function execution time."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start_time = time.time()
        try:
            result = func(*args, **kwargs)
            execution_time = time.time() - start_time
            logger.info(f"{func.__name__} executed in {execution_time:.2f}s")
            return result
        except Exception as e:
            execution_time = time.time() - start_time
            logger.error(f"{func.__name__} failed after {execution_time:.2f}s: {e}")
            raise

    return wrapper


class PerformanceMonitor:
    """Simple performance monitoring for sweeps and batch runs."""

    def __init__(self) -> None:
        self.start_times: dict[str, float] = {}
        self.metrics: dict[str, list[float]] = {}

    def start_timer(self, operation: str) -> None:
        """Start timing an operation."""
        self.start_times[operation] = time.time()
        logger.debug(f"Started timing: {operation}")

    def end_timer(self, operation: str) -> float | None:
        """End timing an operation and record the duration."""
        if operation in self.start_times:
            duration = time.time() - self.start_times.pop(operation)
            self.metrics.setdefault(operation, []).append(duration)
            logger.info(f"Operation '{operation}' completed in {duration:.2f}s")
            return duration
        return None

    def get_average_time(self, operation: str) -> float:
        """Get average execution time for an operation."""
        if operation in self.metrics and self.metrics[operation]:
            return sum(self.metrics[operation]) / len(self.metrics[operation])
        return 0.0

    def get_report(self) -> str:
        """Generate a performance report."""
        if not self.metrics:
            return "No performance metrics available."

        report = "Performance Report:\n"
        for operation, times in self.metrics.items():
            avg_time = sum(times) / len(times)
            report += (
                f"  {operation}: avg={avg_time:.2f}s, min={min(times):.2f}s, "
                f"max={max(times):.2f}s (runs={len(times)})\n"
            )
        return report


performance_monitor = PerformanceMonitor()


def positive_part(x: Any) -> Any:
    """x⁺ for floats, numpy arrays and torch tensors."""
    if hasattr(x, "clamp"):
        return x.clamp(min=0.0)
    return np.maximum(x, 0.0)


def negative_part(x: Any) -> Any:
    """x⁻ = max(-x, 0), so that x = x⁺ - x⁻."""
    if hasattr(x, "clamp"):
        return (-x).clamp(min=0.0)
    return np.maximum(-x, 0.0)


def ordered_map(func: Callable[[T], Any], items: Sequence[T], threads: int = 1) -> list[Any]:
    """
    Apply func to every item on a thread pool.

    Results come back in input order, so anything reduced from them is
    independent of the worker count.
    """
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    return list(
        Parallel(n_jobs=min(threads, len(items)), prefer="threads")(
            delayed(func)(item) for item in items
        )
    )


def atomic_write_text(path: str | Path, content: str) -> Path:
    """Write a file via a temporary sibling and rename it into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(content)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target
