from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coilqa.fucod.config import TooFewSamples


@dataclass(frozen=True, eq=False)
class Standardized:
    """Z-scored features. Dropped (near-constant) columns are zeroed so they
    add nothing to distances or deviation statistics."""

    z: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    dropped: np.ndarray

    @property
    def retained(self) -> np.ndarray:
        return self.z[:, ~self.dropped]


def standardize(features: np.ndarray, eps: float = 1e-12) -> Standardized:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise TooFewSamples(f"standardization needs at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    dropped = std < eps
    z = np.zeros_like(x)
    keep = ~dropped
    z[:, keep] = (x[:, keep] - mean[keep]) / std[keep]
    return Standardized(z=z, mean=mean, std=std, dropped=dropped)
