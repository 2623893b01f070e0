"""Utility functions for nodewise-portfolio."""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, *keys: object) -> int:
    """
    Derive a child seed from a parent seed and a path of keys.

    Uses SHA256 over the '|'-joined parts so that the result depends only on
    the inputs, never on call order or thread scheduling.
    """
    raw = "|".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(raw.encode("utf-8")).hexdigest()
    return int(digest[:16], 16) & _SEED_MASK


def format_float(value: float) -> str:
    """Format a float at 17 significant digits (round-trip exact)."""
    return f"{value:.17g}"


def format_table_value(value: float) -> str:
    """Format a float for summary tables (3 decimals)."""
    return f"{value:.3f}"


def ordered_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Map func over items, in parallel when threads > 1, keeping input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
