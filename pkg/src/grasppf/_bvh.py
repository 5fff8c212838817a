"""Median-split BVH over triangle soups, built with numpy, traversed in kernels.

The tree is flattened into parallel arrays so the numba kernels can walk it
without objects: internal nodes carry child indices, leaves carry a range into
a permuted triangle-order array.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

LEAF_SIZE = 4


class BVH(NamedTuple):
    node_min: NDArray[np.float64]  # (K, 3)
    node_max: NDArray[np.float64]  # (K, 3)
    node_left: NDArray[np.int32]  # child index, -1 for leaves
    node_right: NDArray[np.int32]
    node_start: NDArray[np.int32]  # leaf range into tri_order
    node_count: NDArray[np.int32]  # 0 for internal nodes
    tri_order: NDArray[np.int32]


def build_bvh(
    v0: NDArray[np.float64], v1: NDArray[np.float64], v2: NDArray[np.float64]
) -> BVH:
    n = len(v0)
    if n == 0:
        # Single empty leaf with inverted bounds: every slab test fails.
        return BVH(
            np.full((1, 3), np.inf),
            np.full((1, 3), -np.inf),
            np.array([-1], np.int32),
            np.array([-1], np.int32),
            np.array([0], np.int32),
            np.array([0], np.int32),
            np.zeros(0, np.int32),
        )
    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    centers = (lo + hi) * 0.5
    order = np.arange(n, dtype=np.int32)

    node_min: list[NDArray[np.float64]] = []
    node_max: list[NDArray[np.float64]] = []
    node_left: list[int] = []
    node_right: list[int] = []
    node_start: list[int] = []
    node_count: list[int] = []

    def emit(start: int, end: int) -> int:
        idx = len(node_min)
        sel = order[start:end]
        node_min.append(lo[sel].min(axis=0))
        node_max.append(hi[sel].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(start)
        node_count.append(0)
        if end - start <= LEAF_SIZE:
            node_count[idx] = end - start
            return idx
        c = centers[sel]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (end - start) // 2
        # Median split on the widest centroid axis; stable for determinism.
        part = np.argsort(c[:, axis], kind="stable").astype(np.int32)
        order[start:end] = sel[part]
        node_left[idx] = emit(start, start + mid)
        node_right[idx] = emit(start + mid, end)
        return idx

    import sys

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10_000))
    try:
        emit(0, n)
    finally:
        sys.setrecursionlimit(old_limit)
    return BVH(
        np.ascontiguousarray(node_min, dtype=np.float64),
        np.ascontiguousarray(node_max, dtype=np.float64),
        np.array(node_left, np.int32),
        np.array(node_right, np.int32),
        np.array(node_start, np.int32),
        np.array(node_count, np.int32),
        order,
    )
