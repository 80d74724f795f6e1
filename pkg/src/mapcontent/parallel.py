"""Ordered parallel map used by the per-cube loops."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "MAPCONTENT_THREADS"

_threads = 1


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else the environment variable, else 1."""
    if threads is None:
        raw = os.environ.get(ENV_THREADS, "").strip()
        threads = int(raw) if raw else 1
    return max(1, int(threads))


def set_threads(threads: int | None) -> int:
    global _threads
    _threads = resolve_threads(threads)
    return _threads


def get_threads() -> int:
    return _threads


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """Apply ``fn`` to every item; results come back in input order.

    Reductions are done by the caller on the ordered list, so the output does
    not depend on the worker count.
    """
    items = list(items)
    workers = _threads if threads is None else max(1, threads)
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
