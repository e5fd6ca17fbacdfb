"""The four outlier detectors, each normalized to a score in [0, 1].

* Grubbs: largest absolute z-score of a sample over the retained dimensions,
  relative to the two-sided Grubbs critical value.
* Distance: mean distance to the k nearest neighbours, scored against the
  median and MAD of that quantity over all samples.
* Cluster: distance to the assigned k-means centroid, scored against the
  median and MAD within the cluster.
* LOF: local outlier factor, mapped linearly from 1 (score 0) to ``lof_cap``
  (score 1).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import stats

from coilqa.fucod.config import KTooLarge, TooFewSamples
from coilqa.fucod.neighbors import Neighbors, knn, mean_in_order, pair_distances


class DetectorOutput(NamedTuple):
    raw: np.ndarray
    score: np.ndarray


def _as_matrix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def robust_score(raw: np.ndarray, spread_mult: float, eps: float) -> np.ndarray:
    med = np.median(raw)
    mad = np.median(np.abs(raw - med))
    return np.clip((raw - med) / (spread_mult * mad + eps), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Grubbs


def grubbs_critical(n: int, alpha: float = 0.05) -> float:
    """Two-sided Grubbs critical value for ``n`` samples at level ``alpha``."""
    if n < 3:
        raise TooFewSamples(f"Grubbs test needs at least 3 samples, got {n}")
    t = stats.t.isf(alpha / (2 * n), n - 2)
    return (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))


def grubbs_scores(z: np.ndarray, alpha: float = 0.05) -> DetectorOutput:
    """``z`` must already be standardized; zeroed (dropped) columns add nothing."""
    z = _as_matrix(z)
    g_crit = grubbs_critical(z.shape[0], alpha)
    stat = np.abs(z).max(axis=1)
    return DetectorOutput(stat, np.minimum(1.0, stat / g_crit))


# ---------------------------------------------------------------------------
# kNN distance


def distance_scores(
    z: np.ndarray,
    k_nn: int = 10,
    robust_spread_mult: float = 5.0,
    eps: float = 1e-12,
    neighbors: Neighbors | None = None,
) -> DetectorOutput:
    z = _as_matrix(z)
    if k_nn >= z.shape[0]:
        raise KTooLarge(f"k_nn={k_nn} must be below the sample count {z.shape[0]}")
    nb = neighbors if neighbors is not None and neighbors.k == k_nn else knn(z, k_nn)
    raw = mean_in_order(nb.dist)
    return DetectorOutput(raw, robust_score(raw, robust_spread_mult, eps))


# ---------------------------------------------------------------------------
# Deterministic k-means and cluster membership


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    labels: np.ndarray
    iterations: int


def farthest_first(z: np.ndarray, k: int) -> np.ndarray:
    """Initial centres: the largest-norm sample, then repeatedly the sample
    farthest from all centres chosen so far (lowest index on ties)."""
    norms = pair_distances(z, np.zeros((1, z.shape[1])))[:, 0]
    chosen = [int(np.argmax(norms))]
    closest = pair_distances(z, z[chosen[0]][None, :])[:, 0]
    while len(chosen) < k:
        nxt = int(np.argmax(closest))
        chosen.append(nxt)
        closest = np.minimum(closest, pair_distances(z, z[nxt][None, :])[:, 0])
    return z[chosen].copy()


def _assign(z: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = pair_distances(z, centroids)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(z.shape[0]), labels]


def kmeans(z: np.ndarray, k: int, tol: float = 1e-9, max_iter: int = 100) -> KMeansResult:
    z = _as_matrix(z)
    if not 1 <= k <= z.shape[0]:
        raise KTooLarge(f"k_clusters={k} must lie in [1, {z.shape[0]}]")
    centroids = farthest_first(z, k)
    it = 0
    for it in range(1, max_iter + 1):
        labels, r = _assign(z, centroids)
        new = np.empty_like(centroids)
        spare = r.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = z[members].mean(axis=0)
            else:
                far = int(np.argmax(spare))
                new[c] = z[far]
                spare[far] = -1.0
        move = float(np.max(np.sqrt(((new - centroids) ** 2).sum(axis=1))))
        centroids = new
        if move < tol:
            break
    labels, _ = _assign(z, centroids)
    return KMeansResult(centroids, labels, it)


def cluster_scores(
    z: np.ndarray,
    k_clusters: int = 3,
    robust_spread_mult: float = 5.0,
    eps: float = 1e-12,
) -> DetectorOutput:
    z = _as_matrix(z)
    km = kmeans(z, k_clusters)
    _, r = _assign(z, km.centroids)
    score = np.zeros_like(r)
    for c in range(k_clusters):
        members = np.flatnonzero(km.labels == c)
        if members.size > 1:
            score[members] = robust_score(r[members], robust_spread_mult, eps)
    return DetectorOutput(r, score)


# ---------------------------------------------------------------------------
# Local outlier factor


def lof_scores(
    z: np.ndarray,
    k_nn: int = 10,
    lof_cap: float = 2.0,
    eps: float = 1e-12,
    neighbors: Neighbors | None = None,
) -> DetectorOutput:
    z = _as_matrix(z)
    if k_nn >= z.shape[0]:
        raise KTooLarge(f"k_nn={k_nn} must be below the sample count {z.shape[0]}")
    nb = neighbors if neighbors is not None and neighbors.k == k_nn else knn(z, k_nn)
    reach = np.maximum(nb.k_distance[nb.index], nb.dist)
    # duplicates give zero mean reachability; cap the density at 1/eps
    lrd = 1.0 / np.maximum(mean_in_order(reach), eps)
    lof = mean_in_order(lrd[nb.index]) / lrd
    return DetectorOutput(lof, np.clip((lof - 1.0) / (lof_cap - 1.0), 0.0, 1.0))
