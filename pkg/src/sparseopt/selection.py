"""Index selection primitives: uniform Random-M and magnitude Top-M.

Index sets are represented as sorted, strictly increasing ``numpy.int64``
arrays over a flat domain {0, ..., d-1}.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng


def random_m(rng: Rng, domain_size: int, m: int) -> np.ndarray:
    """Draw m distinct indices uniformly without replacement from range(domain_size).

    Uses a partial Fisher-Yates pass over an index array: O(domain_size)
    memory, O(m) draws. (Floyd's algorithm would avoid the index array for
    very large domains; not needed at the scales handled here.)
    """
    if m < 1 or m > domain_size:
        raise ValueError(
            f"random_m requires 1 <= m <= domain_size, got m={m}, domain_size={domain_size}"
        )
    pool = np.arange(domain_size, dtype=np.int64)
    for i in range(m):
        j = i + rng.below(domain_size - i)
        pool[i], pool[j] = pool[j], pool[i]
    picked = pool[:m]
    picked.sort()
    return picked


def top_m_indices(values: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest-magnitude entries, ties broken by lower index.

    Returned sorted ascending by index.
    """
    values = np.asarray(values)
    n = values.shape[0] if values.ndim == 1 else values.size
    if m < 1 or m > n:
        raise ValueError(f"top_m_indices requires 1 <= m <= len(values), got m={m}, len={n}")
    flat = np.abs(values).ravel()
    # stable sort on -|v| keeps the lower index first among equal magnitudes
    order = np.argsort(-flat, kind="stable")
    picked = np.asarray(order[:m], dtype=np.int64)
    picked.sort()
    return picked


def validate_index_set(indices: np.ndarray, domain_size: int) -> None:
    """Raise if `indices` is not a strictly increasing subset of range(domain_size)."""
    idx = np.asarray(indices)
    if idx.size > domain_size:
        raise ValueError("index set larger than its domain")
    if idx.size == 0:
        return
    if idx[0] < 0 or idx[-1] >= domain_size:
        raise ValueError("index out of domain")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("indices not strictly increasing")
