"""Median-split KD partition of Gaussian centers into balanced blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXIS_RULES = ("spread", "cycle")


@dataclass(frozen=True)
class BlockPartition:
    depth: int
    blocks: list[np.ndarray]
    n: int

    def __len__(self) -> int:
        return len(self.blocks)

    def sizes(self) -> np.ndarray:
        return np.array([len(b) for b in self.blocks], dtype=np.int64)

    def block_of(self) -> np.ndarray:
        """Block index for every primitive index."""
        owner = np.empty(self.n, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            owner[b] = k
        return owner


def depth_for(n: int, s: int) -> int:
    if n < 1 or s < 1:
        raise ValueError("n and s must be positive")
    # integer form of floor(log2(n / s)), exact for any size
    if n < s:
        return 0
    return (n // s).bit_length() - 1


def _split(idx: np.ndarray, centers: np.ndarray, axis: int):
    # idx is ascending, so a stable sort on the coordinate breaks ties by index
    order = np.argsort(centers[idx, axis], kind="stable")
    half = len(idx) // 2
    return np.sort(idx[order[:half]]), np.sort(idx[order[half:]])


def build_partition(centers, s: int, axis_rule: str = "spread") -> BlockPartition:
    """Split to depth ``depth_for(n, s)``; leaves in depth-first left-to-right order.

    Every node sends its ``floor(N/2)`` smallest centers along the chosen
    axis to the left child (ties by original index), which keeps all leaf
    sizes within ``floor(n / 2^d)`` and ``ceil(n / 2^d)``.  ``axis_rule``
    is ``"spread"`` (largest max-min extent, lowest axis on ties) or
    ``"cycle"`` (axis = level mod dim).
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a non-empty (n, dim) array")
    if axis_rule not in AXIS_RULES:
        raise ValueError(f"unknown axis rule {axis_rule!r}")
    bad = ~np.isfinite(centers).all(axis=1)
    if bad.any():
        raise ValueError(f"center {int(np.argmax(bad))} is not finite")
    n, dim = centers.shape
    depth = depth_for(n, s)

    def recurse(idx: np.ndarray, level: int) -> list[np.ndarray]:
        if level == depth:
            return [idx]
        if axis_rule == "cycle":
            axis = level % dim
        else:
            pts = centers[idx]
            axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        left, right = _split(idx, centers, axis)
        return recurse(left, level + 1) + recurse(right, level + 1)

    blocks = recurse(np.arange(n, dtype=np.int64), 0)
    return BlockPartition(depth=depth, blocks=blocks, n=n)


def block_bounds(n: int, depth: int) -> tuple[int, int]:
    return n >> depth, -(-n // (1 << depth))

