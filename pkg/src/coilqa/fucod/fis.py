"""Mamdani fuzzy fusion of the four detector scores.

Inputs (grubbs g, distance d, cluster c, lof l) are fuzzified with LOW/HIGH
trapezoids. Six rules map them to LOW/MED/HIGH output sets: a single detector
alarm yields MED, two corroborating detectors yield HIGH. AND is min, OR is
max, implication min, aggregation max, and the crisp level is the centroid of
the aggregate sampled on a uniform 201-point grid over [0, 1].

Output memberships are evaluated in integer grid units (0..200) and the
centroid is accumulated as paired offsets from the grid midpoint, so a
symmetric aggregate has its centroid at exactly 0.5. Without this a lone
MED activation lands one ulp either side of the 0.5 flag threshold.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

GRID_STEPS = 200
GRID = np.arange(GRID_STEPS + 1) / GRID_STEPS
MIN_AREA = 1e-9


class Trapezoid(NamedTuple):
    a: float
    b: float
    c: float
    d: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[(x >= self.b) & (x <= self.c)] = 1.0
        if self.b > self.a:
            m = (x > self.a) & (x < self.b)
            out[m] = (x[m] - self.a) / (self.b - self.a)
        if self.d > self.c:
            m = (x > self.c) & (x < self.d)
            out[m] = (self.d - x[m]) / (self.d - self.c)
        return out

    def centroid(self) -> float:
        """Closed-form centroid of the trapezoid's area."""
        a, b, c, d = self
        pieces = [  # (area, centroid) of left ramp, plateau, right ramp
            ((b - a) / 2, a + 2 * (b - a) / 3),
            (c - b, (b + c) / 2),
            ((d - c) / 2, c + (d - c) / 3),
        ]
        area = sum(p[0] for p in pieces)
        return sum(p[0] * p[1] for p in pieces) / area


IN_LOW = Trapezoid(0.0, 0.0, 0.3, 0.6)
IN_HIGH = Trapezoid(0.4, 0.7, 1.0, 1.0)
OUT_LOW = Trapezoid(0.0, 0.0, 0.2, 0.4)
OUT_MED = Trapezoid(0.3, 0.45, 0.55, 0.7)
OUT_HIGH = Trapezoid(0.6, 0.8, 1.0, 1.0)

OUTPUT_SETS = {"LOW": OUT_LOW, "MED": OUT_MED, "HIGH": OUT_HIGH}
# consequent of each rule, in rule order R1..R6
RULE_OUTPUTS = ("HIGH", "HIGH", "LOW", "MED", "MED", "HIGH")


def rule_strengths(scores: np.ndarray) -> np.ndarray:
    """Firing strengths (N, 6) for score rows ordered (g, d, c, l)."""
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    lo, hi = IN_LOW(s), IN_HIGH(s)
    g_lo, d_lo, c_lo, l_lo = lo.T
    g_hi, d_hi, c_hi, l_hi = hi.T
    r1 = np.minimum(g_hi, l_hi)
    r2 = np.minimum(d_hi, c_hi)
    r3 = lo.min(axis=1)
    r4 = np.minimum.reduce([np.maximum(g_hi, l_hi), d_lo, c_lo])
    r5 = np.minimum.reduce([np.maximum(d_hi, c_hi), g_lo, l_lo])
    r6 = np.maximum.reduce(
        [
            np.minimum(g_hi, d_hi),
            np.minimum(g_hi, c_hi),
            np.minimum(l_hi, d_hi),
            np.minimum(l_hi, c_hi),
        ]
    )
    return np.column_stack([r1, r2, r3, r4, r5, r6])


def _on_grid(fset: Trapezoid) -> np.ndarray:
    units = Trapezoid(*(round(v * GRID_STEPS) for v in fset))
    return units(np.arange(GRID_STEPS + 1, dtype=float))


_GRID_SETS = {name: _on_grid(fset) for name, fset in OUTPUT_SETS.items()}


def aggregate(strengths: np.ndarray) -> np.ndarray:
    """Aggregated output membership (N, len(GRID)) from rule strengths."""
    agg = np.zeros((strengths.shape[0], GRID.size))
    for name, member in _GRID_SETS.items():
        cols = [i for i, out in enumerate(RULE_OUTPUTS) if out == name]
        level = strengths[:, cols].max(axis=1)
        agg = np.maximum(agg, np.minimum(level[:, None], member[None, :]))
    return agg


def centroid(agg: np.ndarray) -> np.ndarray:
    """Centroid per row of a grid-sampled membership; rows must have mass."""
    half = GRID_STEPS // 2
    left = agg[:, :half]
    right = agg[:, : half : -1]  # mirror partners of the left half
    offsets = np.arange(-half, 0, dtype=float)  # grid units from the midpoint
    moment = (left - right) @ offsets
    return 0.5 + moment / agg.sum(axis=1) / GRID_STEPS


class FusionResult(NamedTuple):
    level: np.ndarray
    fallback: np.ndarray  # True where the aggregate was empty


def fis_fuse_detailed(scores: np.ndarray) -> FusionResult:
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    agg = aggregate(rule_strengths(s))
    mass = agg.sum(axis=1)
    area = mass * (GRID[1] - GRID[0])
    fallback = area < MIN_AREA
    level = np.empty(s.shape[0])
    ok = ~fallback
    level[ok] = centroid(agg[ok])
    level[fallback] = s[fallback].mean(axis=1)
    return FusionResult(np.clip(level, 0.0, 1.0), fallback)


def fis_fuse(scores: np.ndarray) -> np.ndarray:
    """Outlier level in [0, 1] per row of (g, d, c, l) scores."""
    return fis_fuse_detailed(scores).level
