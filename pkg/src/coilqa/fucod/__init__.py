"""Multi-detector outlier levels fused by a fuzzy inference system."""

from coilqa.fucod.config import FucodConfig, KTooLarge, TooFewSamples
from coilqa.fucod.detectors import (
    DetectorOutput,
    KMeansResult,
    cluster_scores,
    distance_scores,
    farthest_first,
    grubbs_critical,
    grubbs_scores,
    kmeans,
    lof_scores,
)
from coilqa.fucod.fis import fis_fuse, rule_strengths
from coilqa.fucod.neighbors import Neighbors, knn
from coilqa.fucod.pipeline import FucodResult, fucod_run
from coilqa.fucod.standardize import Standardized, standardize

__all__ = [
    "DetectorOutput",
    "FucodConfig",
    "FucodResult",
    "KMeansResult",
    "KTooLarge",
    "Neighbors",
    "Standardized",
    "TooFewSamples",
    "cluster_scores",
    "distance_scores",
    "farthest_first",
    "fis_fuse",
    "fucod_run",
    "grubbs_critical",
    "grubbs_scores",
    "kmeans",
    "knn",
    "lof_scores",
    "rule_strengths",
    "standardize",
]
