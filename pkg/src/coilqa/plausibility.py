"""Plausibility measures and their combination into per-sample PV series.

Each measure maps a measurement to a value in [0, 1]; 0 marks implausible
data. Measures are the leaves of an assessment tree whose inner nodes combine
child PV series elementwise.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any, Union

import numpy as np

from coilqa.errors import CoilQAError, InputError
from coilqa.model import CoilRecord, PlausibilityValue

__all__ = [
    "Constant",
    "Threshold",
    "Fuzzy",
    "Variation",
    "DataDriven",
    "Leaf",
    "Combine",
    "Operator",
    "eval_constant",
    "eval_threshold",
    "eval_fuzzy",
    "eval_variation",
    "eval_assessment",
    "pv_summary",
    "channel_series",
    "tree_from_dict",
    "tree_to_dict",
]


class NonFiniteInput(CoilQAError):
    code = "NON_FINITE_INPUT"


class UnknownChannel(InputError):
    code = "UNKNOWN_CHANNEL"


class MissingDataDrivenSource(InputError):
    code = "MISSING_DATA_DRIVEN_SOURCE"


class EmptySeries(InputError):
    code = "EMPTY_SERIES"


# ---------------------------------------------------------------------------
# Measure definitions


@dataclass(frozen=True)
class Constant:
    p_m: float

    def __post_init__(self) -> None:
        PlausibilityValue(self.p_m)


@dataclass(frozen=True)
class Threshold:
    t_min: float
    t_max: float

    def __post_init__(self) -> None:
        if not self.t_min <= self.t_max:
            raise InputError(f"threshold needs t_min <= t_max, got {self.t_min}, {self.t_max}")


@dataclass(frozen=True)
class Fuzzy:
    t0: float
    t1: float
    t2: float
    t3: float

    def __post_init__(self) -> None:
        if not self.t0 <= self.t1 <= self.t2 <= self.t3:
            raise InputError(f"fuzzy corners must be ordered, got {self.corners}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.t0, self.t1, self.t2, self.t3)


@dataclass(frozen=True)
class Variation:
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise InputError(f"variation window must be an integer >= 2, got {self.n}")


@dataclass(frozen=True)
class DataDriven:
    """PV taken from an externally computed series, looked up by ``source``."""

    source: str = "fucod"


MeasureSpec = Union[Constant, Threshold, Fuzzy, Variation, DataDriven]


# ---------------------------------------------------------------------------
# Scalar and series measures


def _finite(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteInput(f"measure input is not finite: {x}")
    return x


def eval_constant(spec: Constant) -> PlausibilityValue:
    return PlausibilityValue(spec.p_m)


def eval_threshold(x: float, t_min: float, t_max: float) -> PlausibilityValue:
    x = _finite(x)
    return PlausibilityValue(1.0 if t_min <= x <= t_max else 0.0)


def eval_fuzzy(x: float, t0: float, t1: float, t2: float, t3: float) -> PlausibilityValue:
    """Trapezoidal membership with plateau [t1, t2].

    Degenerate edges (t0 == t1 or t2 == t3) become steps, so the measure
    falls back to thresholding on [t1, t2].
    """
    x = _finite(x)
    if t1 <= x <= t2:
        return PlausibilityValue(1.0)
    if x <= t0 or x > t3:
        return PlausibilityValue(0.0)
    if x < t1:
        return PlausibilityValue((x - t0) / (t1 - t0))
    return PlausibilityValue((t3 - x) / (t3 - t2))


def _threshold_series(x: np.ndarray, t_min: float, t_max: float) -> np.ndarray:
    return ((x >= t_min) & (x <= t_max)).astype(float)


def _fuzzy_series(x: np.ndarray, t0: float, t1: float, t2: float, t3: float) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    rising = (x > t0) & (x < t1)
    falling = (x > t2) & (x <= t3)
    if t1 > t0:
        out[rising] = (x[rising] - t0) / (t1 - t0)
    if t3 > t2:
        out[falling] = (t3 - x[falling]) / (t3 - t2)
    out[(x >= t1) & (x <= t2)] = 1.0
    return out


def eval_variation(series: Sequence[float] | np.ndarray, n: int) -> np.ndarray:
    """Stuck-signal detector over a trailing window of ``n`` samples.

    A sample gets PV 0 when the window ending at it (inclusive) is constant.
    The first ``n - 1`` samples have no full window and get PV 1.
    """
    if int(n) != n or n < 2:
        raise InputError(f"variation window must be an integer >= 2, got {n}")
    n = int(n)
    x = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("variation series contains non-finite values")
    out = np.ones(x.shape[0], dtype=float)
    if x.shape[0] >= n:
        windows = np.lib.stride_tricks.sliding_window_view(x, n)
        out[n - 1 :] = (windows.max(axis=1) - windows.min(axis=1) != 0).astype(float)
    return out


def pv_summary(pv: Sequence[float] | np.ndarray) -> dict[str, float]:
    arr = np.asarray(pv, dtype=float)
    if arr.size == 0:
        raise EmptySeries("pv_summary needs at least one value")
    return {"pv_min": float(arr.min()), "pv_mean": float(arr.mean())}


# ---------------------------------------------------------------------------
# Assessment trees


class Operator(str, Enum):
    MIN = "MIN"
    MAX = "MAX"
    PRODUCT = "PRODUCT"
    WEIGHTED_MEAN = "WEIGHTED_MEAN"


@dataclass(frozen=True)
class Leaf:
    channel: str
    measure: MeasureSpec


@dataclass(frozen=True)
class Combine:
    children: tuple[AssessmentNode, ...]
    op: Operator = Operator.MIN
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", Operator(self.op))
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise InputError("a combine node needs at least one child")
        if self.op is Operator.WEIGHTED_MEAN:
            if self.weights is None or len(self.weights) != len(self.children):
                raise InputError("WEIGHTED_MEAN needs one weight per child")
            w = tuple(float(v) for v in self.weights)
            if any(v < 0 for v in w) or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
                raise InputError(f"weights must be non-negative and sum to 1, got {w}")
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise InputError(f"weights are only valid for WEIGHTED_MEAN, not {self.op.value}")


AssessmentNode = Union[Leaf, Combine]


def channel_series(coil: CoilRecord, channel: str) -> np.ndarray:
    """Per-sample series of a channel; ``p4`` is averaged across the width."""
    if channel in ("p1", "p2", "p3"):
        return getattr(coil, channel)
    if channel == "p4":
        return coil.p4.mean(axis=1)
    raise UnknownChannel(f"unknown channel {channel!r}")


def _eval_leaf(
    leaf: Leaf, coil: CoilRecord, external_pv: Mapping[str, np.ndarray] | None
) -> np.ndarray:
    m = leaf.measure
    n = coil.n_samples
    if isinstance(m, DataDriven):
        if external_pv is None or m.source not in external_pv:
            raise MissingDataDrivenSource(f"no PV series supplied for source {m.source!r}")
        src = np.asarray(external_pv[m.source], dtype=float)
        if src.shape != (n,):
            raise MissingDataDrivenSource(
                f"source {m.source!r} has shape {src.shape}, expected ({n},)"
            )
        if not np.all((src >= 0) & (src <= 1)):
            raise InputError(f"source {m.source!r} has values outside [0, 1]")
        return src.astype(float, copy=True)
    x = channel_series(coil, leaf.channel)
    if isinstance(m, Constant):
        return np.full(n, float(eval_constant(m)))
    if isinstance(m, Threshold):
        return _threshold_series(x, m.t_min, m.t_max)
    if isinstance(m, Fuzzy):
        return _fuzzy_series(x, *m.corners)
    if isinstance(m, Variation):
        return eval_variation(x, m.n)
    raise InputError(f"unsupported measure {m!r}")


def eval_assessment(
    tree: AssessmentNode,
    coil: CoilRecord,
    external_pv: Mapping[str, Any] | None = None,
) -> np.ndarray:
    """Evaluate an assessment tree to one PV per sample."""
    if isinstance(tree, Leaf):
        return _eval_leaf(tree, coil, external_pv)
    parts = np.vstack([eval_assessment(c, coil, external_pv) for c in tree.children])
    if tree.op is Operator.MIN:
        out = parts.min(axis=0)
    elif tree.op is Operator.MAX:
        out = parts.max(axis=0)
    elif tree.op is Operator.PRODUCT:
        out = parts.prod(axis=0)
    else:
        out = np.asarray(tree.weights) @ parts
    # weights summing to 1 within 1e-9 can push a mean of ones just past 1
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Document form used by run configurations

_MEASURES: dict[str, type] = {
    "constant": Constant,
    "threshold": Threshold,
    "fuzzy": Fuzzy,
    "variation": Variation,
    "data_driven": DataDriven,
}


def tree_from_dict(doc: Mapping[str, Any], channel: str | None = None) -> AssessmentNode:
    """Build a tree from its JSON form.

    Leaves look like ``{"channel": "p1", "measure": {"kind": "threshold",
    "t_min": 0, "t_max": 5}}``; the channel may be omitted when a default is
    given. Inner nodes are ``{"op": "MIN", "children": [...]}`` with ``op``
    defaulting to MIN and ``weights`` required for WEIGHTED_MEAN.
    """
    if not isinstance(doc, Mapping):
        raise InputError(f"assessment node must be an object, got {type(doc).__name__}")
    if "children" in doc:
        return Combine(
            children=tuple(tree_from_dict(c, channel) for c in doc["children"]),
            op=doc.get("op", Operator.MIN),
            weights=tuple(doc["weights"]) if doc.get("weights") is not None else None,
        )
    if "measure" not in doc:
        raise InputError(f"assessment node needs 'measure' or 'children': {dict(doc)}")
    params = dict(doc["measure"])
    kind = params.pop("kind", None)
    if kind not in _MEASURES:
        raise InputError(f"unknown measure kind {kind!r}")
    try:
        measure = _MEASURES[kind](**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {kind} measure: {exc}") from exc
    ch = doc.get("channel", channel)
    if ch is None:
        raise InputError("leaf has no channel")
    return Leaf(channel=ch, measure=measure)


def tree_to_dict(node: AssessmentNode) -> dict[str, Any]:
    if isinstance(node, Combine):
        out: dict[str, Any] = {
            "op": node.op.value,
            "children": [tree_to_dict(c) for c in node.children],
        }
        if node.weights is not None:
            out["weights"] = list(node.weights)
        return out
    kind = next(k for k, cls in _MEASURES.items() if isinstance(node.measure, cls))
    return {"channel": node.channel, "measure": {"kind": kind, **node.measure.__dict__}}


def tree_channels(node: AssessmentNode) -> set[str]:
    if isinstance(node, Leaf):
        return set() if isinstance(node.measure, DataDriven) else {node.channel}
    return set().union(*(tree_channels(c) for c in node.children))
