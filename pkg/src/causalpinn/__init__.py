"""Causality-weighted physics-informed network training engine."""

__version__ = "0.1.0"


def _tune_allocator():
    # Training is allocation-heavy with ~MB-sized arrays; keep glibc from
    # round-tripping those through mmap on every temporary.
    import ctypes
    import ctypes.util

    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)
        M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
        libc.mallopt(M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError, TypeError):
        pass


_tune_allocator()
del _tune_allocator
