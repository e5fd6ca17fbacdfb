"""Exact k-nearest-neighbour search by chunked brute force.

Distances are accumulated one dimension at a time in column order and then
square-rooted, so any straightforward per-pair loop reproduces them bit for
bit. Ties are broken by the lower sample index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coilqa.fucod.config import KTooLarge

_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True, eq=False)
class Neighbors:
    index: np.ndarray  # (N, k) neighbour indices, nearest first
    dist: np.ndarray  # (N, k) matching distances

    @property
    def k(self) -> int:
        return int(self.index.shape[1])

    @property
    def k_distance(self) -> np.ndarray:
        return self.dist[:, -1]


def pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of ``a`` and rows of ``b``."""
    acc = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        diff = a[:, j, None] - b[None, :, j]
        acc += diff * diff
    return np.sqrt(acc)


def knn(z: np.ndarray, k: int) -> Neighbors:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n = z.shape[0]
    if not 1 <= k < n:
        raise KTooLarge(f"k={k} must be at least 1 and below the sample count {n}")
    index = np.empty((n, k), dtype=np.intp)
    dist = np.empty((n, k))
    chunk = max(1, _CHUNK_CELLS // n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = pair_distances(z[start:stop], z)
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        # candidates: everything within the k-th smallest distance
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        within = d <= kth[:, None]
        counts = within.sum(axis=1)
        simple = counts == k
        if simple.any():
            cand = np.nonzero(within[simple])[1].reshape(-1, k)
            cd = np.take_along_axis(d[simple], cand, axis=1)
            order = np.argsort(cd, axis=1, kind="stable")
            index[start:stop][simple] = np.take_along_axis(cand, order, axis=1)
            dist[start:stop][simple] = np.take_along_axis(cd, order, axis=1)
        for r in np.flatnonzero(~simple):
            cand = np.flatnonzero(within[r])
            order = np.argsort(d[r, cand], kind="stable")[:k]
            index[start + r] = cand[order]
            dist[start + r] = d[r, cand[order]]
    return Neighbors(index=index, dist=dist)


def mean_in_order(values: np.ndarray) -> np.ndarray:
    """Row means summed left to right (numpy's pairwise sum reorders)."""
    acc = values[:, 0].copy()
    for j in range(1, values.shape[1]):
        acc += values[:, j]
    return acc / values.shape[1]
