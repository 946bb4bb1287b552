"""Pick the kernel implementation once, at import time.

The compiled extension is used when it imports; ``FIBERTENSOR_BACKEND=python``
forces the numpy fallback (handy for benchmarks and for debugging).
"""
import os

from . import _pure

_requested = os.environ.get("FIBERTENSOR_BACKEND", "auto").lower()

kernels = _pure
name = "python"
if _requested != "python":
    try:
        from . import _kernels
    except ImportError:
        if _requested == "compiled":
            raise
    else:
        kernels = _kernels
        name = "compiled"

_threads = max(1, os.cpu_count() or 1)


def get_threads() -> int:
    return _threads


def set_threads(n: int) -> None:
    """Worker count for the parallel kernels; results never depend on it."""
    global _threads
    if int(n) < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = int(n)
