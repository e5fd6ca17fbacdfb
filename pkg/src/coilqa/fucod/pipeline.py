from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coilqa.fucod.config import FucodConfig
from coilqa.fucod.detectors import cluster_scores, distance_scores, grubbs_scores, lof_scores
from coilqa.fucod.fis import fis_fuse_detailed
from coilqa.fucod.neighbors import knn
from coilqa.fucod.standardize import standardize
from coilqa.model import DetectorScores


@dataclass(frozen=True, eq=False)
class FucodResult:
    levels: np.ndarray
    scores: DetectorScores
    dropped: np.ndarray
    raw_distance: np.ndarray
    raw_lof: np.ndarray
    fallback_count: int

    def flagged(self, threshold: float = 0.5) -> np.ndarray:
        return self.levels >= threshold


def fucod_run(features: np.ndarray, config: FucodConfig | None = None) -> FucodResult:
    """Outlier level per row of ``features`` (typically the 4-column coil matrix)."""
    cfg = config or FucodConfig()
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cfg.check_sample_count(x.shape[0])

    st = standardize(x, cfg.eps)
    z = st.z
    nb = knn(z, cfg.k_nn)
    g = grubbs_scores(z, cfg.alpha)
    d = distance_scores(z, cfg.k_nn, cfg.robust_spread_mult, cfg.eps, neighbors=nb)
    c = cluster_scores(z, cfg.k_clusters, cfg.robust_spread_mult, cfg.eps)
    lof = lof_scores(z, cfg.k_nn, cfg.lof_cap, cfg.eps, neighbors=nb)

    scores = DetectorScores(grubbs=g.score, distance=d.score, cluster=c.score, lof=lof.score)
    fused = fis_fuse_detailed(scores.as_matrix())
    return FucodResult(
        levels=fused.level,
        scores=scores,
        dropped=st.dropped,
        raw_distance=d.raw,
        raw_lof=lof.raw,
        fallback_count=int(fused.fallback.sum()),
    )
