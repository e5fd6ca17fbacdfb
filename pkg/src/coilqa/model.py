"""Domain types shared by all modules.

All types are immutable once constructed. Numeric arrays are stored as
read-only float64 numpy arrays so records can be shared between threads.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

import numpy as np

from coilqa.errors import InputError, Issue, ValidationError

CHANNELS: tuple[str, ...] = ("p1", "p2", "p3", "p4")
DEFAULT_OUTLIER_THRESHOLD = 0.5
CERT_SCHEMA_VERSION = "q4-cert/1"


def _frozen(values: Any, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InputError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _unit_fraction(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise InputError(f"{name} must lie in [0, 1], got {value}")
    return value


class PlausibilityValue(float):
    """Confidence in a measurement: 0 means not plausible, 1 fully reliable."""

    def __new__(cls, value: float) -> PlausibilityValue:
        value = float(value)
        if not (0.0 <= value <= 1.0):
            raise InputError(f"plausibility value must lie in [0, 1], got {value}")
        return super().__new__(cls, value)


def check_pv_series(values: Any, name: str = "pv") -> np.ndarray:
    """Return ``values`` as a read-only array, rejecting anything outside [0, 1]."""
    arr = _frozen(values, ndim=1)
    if arr.size and not (np.all(arr >= 0.0) and np.all(arr <= 1.0)):
        raise InputError(f"{name}: plausibility values must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# Coil data


@dataclass(frozen=True, eq=False)
class CoilRecord:
    """Raw measurements of one coil.

    ``p1``..``p3`` hold one value per length position; ``p4`` is the surface
    map with shape (N, W). Construction validates the whole record and raises
    :class:`ValidationError` listing every violation.
    """

    coil_id: str
    sample_step_m: float
    positions_m: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray

    def __post_init__(self) -> None:
        issues: list[Issue] = []
        arrays: dict[str, np.ndarray] = {}
        for name in ("positions_m", "p1", "p2", "p3", "p4"):
            try:
                arr = np.array(getattr(self, name), dtype=float)
            except (TypeError, ValueError) as exc:
                issues.append(Issue("NOT_NUMERIC", name, detail=str(exc)))
                continue
            want = 2 if name == "p4" else 1
            if arr.ndim != want:
                issues.append(Issue("BAD_SHAPE", name, detail=f"expected {want}-D, got {arr.shape}"))
                continue
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)

        if not isinstance(self.coil_id, str) or not self.coil_id or any(
            c.isspace() or c in ",=" for c in self.coil_id
        ):
            issues.append(Issue("BAD_COIL_ID", "coil_id", detail=repr(self.coil_id)))
        try:
            step = float(self.sample_step_m)
        except (TypeError, ValueError):
            step = math.nan
        object.__setattr__(self, "sample_step_m", step)
        if not (math.isfinite(step) and step > 0):
            issues.append(Issue("BAD_SAMPLE_STEP", "sample_step_m", detail=repr(self.sample_step_m)))

        if "positions_m" in arrays:
            n = arrays["positions_m"].shape[0]
            if n < 1:
                issues.append(Issue("EMPTY_RECORD", "positions_m"))
            for name in ("p1", "p2", "p3", "p4"):
                if name in arrays and arrays[name].shape[0] != n:
                    issues.append(
                        Issue(
                            "LENGTH_MISMATCH",
                            name,
                            detail=f"{arrays[name].shape[0]} rows, expected {n}",
                        )
                    )
            pos = arrays["positions_m"]
            for i in np.flatnonzero(np.diff(pos) <= 0) + 1:
                if math.isfinite(pos[i]) and math.isfinite(pos[i - 1]):
                    issues.append(Issue("NON_MONOTONE_POSITIONS", "positions_m", int(i)))
        if "p4" in arrays and arrays["p4"].shape[1] < 1:
            issues.append(Issue("EMPTY_WIDTH", "p4"))

        for name, arr in arrays.items():
            bad = ~np.isfinite(arr)
            if bad.any():
                rows = np.flatnonzero(bad.any(axis=1)) if arr.ndim == 2 else np.flatnonzero(bad)
                issues.extend(Issue("NON_FINITE_VALUE", name, int(i)) for i in rows)

        if issues:
            raise ValidationError(issues)

    @property
    def n_samples(self) -> int:
        return int(self.positions_m.shape[0])

    @property
    def width(self) -> int:
        return int(self.p4.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoilRecord):
            return NotImplemented
        return (
            self.coil_id == other.coil_id
            and self.sample_step_m == other.sample_step_m
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("positions_m", "p1", "p2", "p3", "p4")
            )
        )

    __hash__ = None  # type: ignore[assignment]


_COIL_FIELDS = ("coil_id", "sample_step_m", "positions_m", "p1", "p2", "p3", "p4")


def validate_coil(raw: CoilRecord | Mapping[str, Any]) -> CoilRecord:
    """Validate a coil candidate.

    Accepts a mapping with the :class:`CoilRecord` field names, or an existing
    record (which is re-checked and returned as an equal record). Raises
    :class:`ValidationError` carrying all violations.
    """
    if isinstance(raw, CoilRecord):
        return CoilRecord(**{k: getattr(raw, k) for k in _COIL_FIELDS})
    missing = [k for k in _COIL_FIELDS if k not in raw]
    if missing:
        raise ValidationError([Issue("MISSING_FIELD", k) for k in missing])
    return CoilRecord(**{k: raw[k] for k in _COIL_FIELDS})


# ---------------------------------------------------------------------------
# Outlier detection outputs


@dataclass(frozen=True, eq=False)
class DetectorScores:
    """Per-sample normalized scores of the four detectors, each in [0, 1]."""

    grubbs: np.ndarray
    distance: np.ndarray
    cluster: np.ndarray
    lof: np.ndarray

    def __post_init__(self) -> None:
        n = None
        for name in ("grubbs", "distance", "cluster", "lof"):
            arr = check_pv_series(getattr(self, name), name)
            if n is not None and arr.shape[0] != n:
                raise InputError("detector score series differ in length")
            n = arr.shape[0]
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.grubbs.shape[0])

    def as_matrix(self) -> np.ndarray:
        """(N, 4) matrix with columns grubbs, distance, cluster, lof."""
        return np.column_stack([self.grubbs, self.distance, self.cluster, self.lof])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DetectorScores):
            return NotImplemented
        return np.array_equal(self.as_matrix(), other.as_matrix())

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Quality record produced by the generation stage


@dataclass(frozen=True)
class ChannelSummary:
    mean: float
    min: float
    max: float
    pv_min: float
    pv_mean: float


@dataclass(frozen=True, eq=False)
class QualityRecord:
    """Quality data of one coil together with plausibility and outlier levels."""

    coil_id: str
    positions_m: np.ndarray
    values: Mapping[str, np.ndarray]
    pv: Mapping[str, np.ndarray]
    combined_pv: np.ndarray
    outlier_levels: np.ndarray
    detector_scores: DetectorScores
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions_m", _frozen(self.positions_m, ndim=1))
        n = self.positions_m.shape[0]
        if n < 1:
            raise InputError("quality record must contain at least one sample")
        values = {ch: _frozen(v, ndim=1) for ch, v in self.values.items()}
        pv = {ch: check_pv_series(v, f"pv[{ch}]") for ch, v in self.pv.items()}
        if set(values) != set(pv):
            raise InputError("value and PV channels differ")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pv", pv)
        object.__setattr__(self, "combined_pv", check_pv_series(self.combined_pv, "combined_pv"))
        object.__setattr__(
            self, "outlier_levels", check_pv_series(self.outlier_levels, "outlier_levels")
        )
        series = [*values.values(), *pv.values(), self.combined_pv, self.outlier_levels]
        if any(s.shape[0] != n for s in series) or len(self.detector_scores) != n:
            raise InputError("all quality record series must have one entry per sample")
        if not all(np.all(np.isfinite(s)) for s in series):
            raise InputError("quality record contains non-finite values")
        _unit_fraction("outlier_threshold", self.outlier_threshold)

    @property
    def n_samples(self) -> int:
        return int(self.positions_m.shape[0])

    @property
    def channels(self) -> list[str]:
        return sorted(self.values)

    def outlier_mask(self, threshold: float | None = None) -> np.ndarray:
        t = self.outlier_threshold if threshold is None else threshold
        return self.outlier_levels >= t

    def outlier_count(self, threshold: float | None = None) -> int:
        return int(np.count_nonzero(self.outlier_mask(threshold)))

    def outlier_fraction(self, threshold: float | None = None) -> float:
        return self.outlier_count(threshold) / self.n_samples

    def channel_summary(self, channel: str) -> ChannelSummary:
        v, p = self.values[channel], self.pv[channel]
        return ChannelSummary(
            mean=float(np.mean(v)),
            min=float(np.min(v)),
            max=float(np.max(v)),
            pv_min=float(np.min(p)),
            pv_mean=float(np.mean(p)),
        )

    def summary(self) -> dict[str, Any]:
        return {
            "channels": {ch: self.channel_summary(ch).__dict__ for ch in self.channels},
            "outlier_count": self.outlier_count(),
            "outlier_fraction": self.outlier_fraction(),
        }

    def to_dict(self) -> dict[str, Any]:
        s = self.detector_scores
        return {
            "coil_id": self.coil_id,
            "positions_m": self.positions_m.tolist(),
            "values": {ch: self.values[ch].tolist() for ch in self.channels},
            "pv": {ch: self.pv[ch].tolist() for ch in self.channels},
            "combined_pv": self.combined_pv.tolist(),
            "outlier_levels": self.outlier_levels.tolist(),
            "outlier_threshold": self.outlier_threshold,
            "detector_scores": {
                "grubbs": s.grubbs.tolist(),
                "distance": s.distance.tolist(),
                "cluster": s.cluster.tolist(),
                "lof": s.lof.tolist(),
            },
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> QualityRecord:
        try:
            return cls(
                coil_id=doc["coil_id"],
                positions_m=doc["positions_m"],
                values=doc["values"],
                pv=doc["pv"],
                combined_pv=doc["combined_pv"],
                outlier_levels=doc["outlier_levels"],
                detector_scores=DetectorScores(**doc["detector_scores"]),
                outlier_threshold=doc.get("outlier_threshold", DEFAULT_OUTLIER_THRESHOLD),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed quality record document: {exc!r}") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QualityRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Orders, customers and allocation


class Intimacy(str, Enum):
    BASIC = "BASIC"
    STANDARD = "STANDARD"
    FULL = "FULL"


class Verdict(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"


@dataclass(frozen=True)
class OrderSpec:
    order_id: str
    customer_id: str
    bands: Mapping[str, tuple[float, float]]
    pv_threshold: float = 0.5
    coverage_req: float = 0.98
    data_sufficiency: float = 0.95
    max_outlier_frac: float = 0.001
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD

    def __post_init__(self) -> None:
        bands: dict[str, tuple[float, float]] = {}
        for ch, band in self.bands.items():
            lo, hi = (float(b) for b in band)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InputError(f"order {self.order_id}: bad tolerance band for {ch}: {band}")
            bands[ch] = (lo, hi)
        object.__setattr__(self, "bands", bands)
        for name in (
            "pv_threshold",
            "coverage_req",
            "data_sufficiency",
            "max_outlier_frac",
            "outlier_threshold",
        ):
            object.__setattr__(self, name, _unit_fraction(name, getattr(self, name)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "order_id": self.order_id,
            "customer_id": self.customer_id,
            "bands": {ch: list(b) for ch, b in sorted(self.bands.items())},
            "pv_threshold": self.pv_threshold,
            "coverage_req": self.coverage_req,
            "data_sufficiency": self.data_sufficiency,
            "max_outlier_frac": self.max_outlier_frac,
            "outlier_threshold": self.outlier_threshold,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> OrderSpec:
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise InputError(f"malformed order document: {exc}") from exc


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: str
    intimacy: Intimacy

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "intimacy", Intimacy(self.intimacy))
        except ValueError as exc:
            raise InputError(f"unknown intimacy level {self.intimacy!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"customer_id": self.customer_id, "intimacy": self.intimacy.value}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> CustomerProfile:
        try:
            return cls(customer_id=doc["customer_id"], intimacy=doc["intimacy"])
        except KeyError as exc:
            raise InputError(f"malformed profile document: missing {exc}") from exc


@dataclass(frozen=True)
class Reason:
    channel: str
    rule: str
    measured: float
    limit: float


@dataclass(frozen=True)
class AllocationDecision:
    verdict: Verdict
    reasons: tuple[Reason, ...] = ()
    coil_id: str = ""
    order_id: str = ""
    customer_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "reasons", tuple(self.reasons))
        if self.verdict is Verdict.ACCEPT and self.reasons:
            raise InputError("an ACCEPT decision carries no reasons")
        if self.verdict is not Verdict.ACCEPT and not self.reasons:
            raise InputError(f"a {self.verdict.value} decision needs at least one reason")

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "reasons": [r.__dict__ for r in self.reasons],
            "coil_id": self.coil_id,
            "order_id": self.order_id,
            "customer_id": self.customer_id,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> AllocationDecision:
        try:
            return cls(
                verdict=doc["verdict"],
                reasons=tuple(Reason(**r) for r in doc.get("reasons", ())),
                coil_id=doc.get("coil_id", ""),
                order_id=doc.get("order_id", ""),
                customer_id=doc.get("customer_id", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed decision document: {exc!r}") from exc


# ---------------------------------------------------------------------------
# Exchanged documents


def utc_seconds(ts: datetime) -> datetime:
    """Normalize to an aware UTC timestamp with whole seconds."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_utc(ts: datetime) -> str:
    return utc_seconds(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    try:
        ts = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad UTC timestamp {text!r}") from exc
    return ts.replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class QualityCertificate:
    """Per-order certificate. ``channels`` and ``outlier_summary`` hold
    plain JSON-compatible data whose detail depends on ``intimacy``."""

    certificate_id: str
    coil_id: str
    order_id: str
    customer_id: str
    intimacy: Intimacy
    verdict: Verdict
    channels: Mapping[str, Any]
    generated_at: datetime
    outlier_summary: Mapping[str, Any] | None = None
    positions_m: Sequence[float] | None = None
    schema_version: str = CERT_SCHEMA_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "intimacy", Intimacy(self.intimacy))
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "generated_at", utc_seconds(self.generated_at))
        if self.schema_version != CERT_SCHEMA_VERSION:
            raise InputError(f"unsupported schema version {self.schema_version!r}")
        if self.outlier_summary is not None:
            frac = self.outlier_summary.get("fraction")
            if frac is not None:
                _unit_fraction("outlier_summary.fraction", frac)


class FeedbackKind(str, Enum):
    OUT_OF_TOLERANCE = "OUT_OF_TOLERANCE"
    LOW_PLAUSIBILITY = "LOW_PLAUSIBILITY"
    OUTLIER = "OUTLIER"


@dataclass(frozen=True)
class FeedbackItem:
    channel: str
    position_m: float
    kind: FeedbackKind
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FeedbackKind(self.kind))
        object.__setattr__(self, "position_m", float(self.position_m))
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class FeedbackReport:
    certificate_id: str
    coil_id: str
    items: tuple[FeedbackItem, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))

    def to_dict(self) -> dict[str, Any]:
        return {
            "certificate_id": self.certificate_id,
            "coil_id": self.coil_id,
            "items": [
                {
                    "channel": it.channel,
                    "position_m": it.position_m,
                    "kind": it.kind.value,
                    "value": it.value,
                }
                for it in self.items
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> FeedbackReport:
        try:
            return cls(
                certificate_id=doc["certificate_id"],
                coil_id=doc["coil_id"],
                items=tuple(FeedbackItem(**it) for it in doc["items"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed feedback document: {exc!r}") from exc
