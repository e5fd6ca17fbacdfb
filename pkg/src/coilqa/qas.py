"""Allocation of a coil to an order, certificate payload selection and supplier
feedback.

Plausibility gates everything: only samples whose channel PV reaches the
order's threshold count as evidence, so implausible readings can neither
reject nor accept a coil.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from datetime import datetime
from typing import Any

import numpy as np

from coilqa.errors import InputError
from coilqa.model import (
    AllocationDecision,
    CustomerProfile,
    FeedbackItem,
    FeedbackKind,
    FeedbackReport,
    Intimacy,
    OrderSpec,
    QualityCertificate,
    QualityRecord,
    Reason,
    Verdict,
)

ALL_CHANNELS = "*"  # channel name used for coil-level (fused) findings

RULE_SUFFICIENCY = "DATA_SUFFICIENCY"
RULE_COVERAGE = "TOLERANCE_COVERAGE"
RULE_OUTLIERS = "OUTLIER_FRACTION"


class ChannelMismatch(InputError):
    code = "CHANNEL_MISMATCH"


def _constrained(record: QualityRecord, order: OrderSpec) -> list[str]:
    missing = sorted(set(order.bands) - set(record.values))
    if missing:
        raise ChannelMismatch(
            f"order {order.order_id} constrains channels missing from the record: {missing}"
        )
    return sorted(order.bands)


def allocate(record: QualityRecord, order: OrderSpec) -> AllocationDecision:
    channels = _constrained(record, order)
    n = record.n_samples
    ctx = {"coil_id": record.coil_id, "order_id": order.order_id, "customer_id": order.customer_id}

    trusted = {ch: record.pv[ch] >= order.pv_threshold for ch in channels}
    short = [
        Reason(ch, RULE_SUFFICIENCY, float(trusted[ch].sum()) / n, order.data_sufficiency)
        for ch in channels
        if trusted[ch].sum() / n < order.data_sufficiency
    ]
    if short:
        return AllocationDecision(Verdict.INSUFFICIENT_DATA, tuple(short), **ctx)

    reasons = []
    for ch in channels:
        lo, hi = order.bands[ch]
        v = record.values[ch][trusted[ch]]
        # no trusted samples at all counts as zero coverage
        coverage = float(np.count_nonzero((v >= lo) & (v <= hi))) / v.size if v.size else 0.0
        if coverage < order.coverage_req:
            reasons.append(Reason(ch, RULE_COVERAGE, coverage, order.coverage_req))
    frac = record.outlier_fraction(order.outlier_threshold)
    if frac > order.max_outlier_frac:
        reasons.append(Reason(ALL_CHANNELS, RULE_OUTLIERS, frac, order.max_outlier_frac))
    if reasons:
        return AllocationDecision(Verdict.REJECT, tuple(reasons), **ctx)
    return AllocationDecision(Verdict.ACCEPT, (), **ctx)


@dataclass(frozen=True)
class CertificatePayload:
    """Quality content of a certificate, filtered by customer intimacy.

    BASIC carries the verdict only, STANDARD adds per-channel aggregates and
    the outlier count/fraction, FULL adds per-sample values, PVs, sample
    positions and outlier positions.
    """

    verdict: Verdict
    intimacy: Intimacy
    channels: dict[str, dict[str, Any]]
    outlier_summary: dict[str, Any] | None = None
    positions_m: list[float] | None = None


def select_payload(
    record: QualityRecord, decision: AllocationDecision, profile: CustomerProfile
) -> CertificatePayload:
    level = profile.intimacy
    if level is Intimacy.BASIC:
        return CertificatePayload(decision.verdict, level, {})

    channels: dict[str, dict[str, Any]] = {}
    for ch in record.channels:
        block: dict[str, Any] = dict(record.channel_summary(ch).__dict__)
        if level is Intimacy.FULL:
            block["values"] = record.values[ch].tolist()
            block["pv"] = record.pv[ch].tolist()
        channels[ch] = block
    outliers: dict[str, Any] = {
        "count": record.outlier_count(),
        "fraction": record.outlier_fraction(),
    }
    if level is Intimacy.STANDARD:
        return CertificatePayload(decision.verdict, level, channels, outliers)
    outliers["positions"] = record.positions_m[record.outlier_mask()].tolist()
    return CertificatePayload(
        decision.verdict, level, channels, outliers, record.positions_m.tolist()
    )


def certificate_id_for(coil_id: str, order_id: str, customer_id: str, generated_at: datetime) -> str:
    key = "|".join([coil_id, order_id, customer_id, generated_at.isoformat()])
    return str(uuid.uuid5(uuid.NAMESPACE_URL, "coilqa-cert:" + key))


def build_certificate(
    record: QualityRecord,
    decision: AllocationDecision,
    profile: CustomerProfile,
    generated_at: datetime,
    certificate_id: str | None = None,
) -> QualityCertificate:
    if decision.customer_id and decision.customer_id != profile.customer_id:
        raise InputError(
            f"decision is for customer {decision.customer_id}, profile for {profile.customer_id}"
        )
    if decision.coil_id and decision.coil_id != record.coil_id:
        raise InputError(f"decision is for coil {decision.coil_id}, record for {record.coil_id}")
    payload = select_payload(record, decision, profile)
    cert = QualityCertificate(
        certificate_id="",
        coil_id=record.coil_id,
        order_id=decision.order_id,
        customer_id=profile.customer_id,
        intimacy=profile.intimacy,
        verdict=payload.verdict,
        channels=payload.channels,
        generated_at=generated_at,
        outlier_summary=payload.outlier_summary,
        positions_m=payload.positions_m,
    )
    cid = certificate_id or certificate_id_for(
        cert.coil_id, cert.order_id, cert.customer_id, cert.generated_at
    )
    return QualityCertificate(**{**cert.__dict__, "certificate_id": cid})


def build_feedback(
    record: QualityRecord, order: OrderSpec, certificate_id: str = ""
) -> FeedbackReport:
    """One item per offending sample and channel.

    A sample below the PV threshold is reported as LOW_PLAUSIBILITY (its PV
    as value) and never also as OUT_OF_TOLERANCE. Outlier items use channel
    ``"*"`` and carry the fused outlier level.
    """
    channels = _constrained(record, order)
    pos = record.positions_m
    items: list[FeedbackItem] = []
    for ch in channels:
        lo, hi = order.bands[ch]
        v, pv = record.values[ch], record.pv[ch]
        low_pv = pv < order.pv_threshold
        for i in np.flatnonzero(low_pv):
            items.append(FeedbackItem(ch, pos[i], FeedbackKind.LOW_PLAUSIBILITY, pv[i]))
        for i in np.flatnonzero(~low_pv & ((v < lo) | (v > hi))):
            items.append(FeedbackItem(ch, pos[i], FeedbackKind.OUT_OF_TOLERANCE, v[i]))
    levels = record.outlier_levels
    for i in np.flatnonzero(record.outlier_mask(order.outlier_threshold)):
        items.append(FeedbackItem(ALL_CHANNELS, pos[i], FeedbackKind.OUTLIER, levels[i]))
    items.sort(key=lambda it: (it.position_m, it.channel))
    return FeedbackReport(certificate_id=certificate_id, coil_id=record.coil_id, items=tuple(items))


def check_feedback_extent(report: FeedbackReport, record: QualityRecord) -> None:
    lo, hi = float(record.positions_m[0]), float(record.positions_m[-1])
    bad = [it for it in report.items if not lo <= it.position_m <= hi]
    if bad:
        raise InputError(f"{len(bad)} feedback items lie outside the coil extent [{lo}, {hi}]")
