"""Quality data generation: coil -> quality record with PVs and outlier levels."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from coilqa.errors import InputError
from coilqa.fucod import FucodConfig, FucodResult, fucod_run
from coilqa.ingest import feature_matrix
from coilqa.model import CHANNELS, CoilRecord, CustomerProfile, OrderSpec, QualityRecord
from coilqa.plausibility import (
    AssessmentNode,
    Combine,
    DataDriven,
    Leaf,
    Operator,
    Variation,
    channel_series,
    eval_assessment,
    tree_channels,
    tree_from_dict,
    tree_to_dict,
)

FUCOD_SOURCE = "fucod"
DEFAULT_VARIATION_WINDOW = 10


def default_assessment(channel: str) -> AssessmentNode:
    """Stuck-signal check combined (MIN) with the FUCOD-derived PV."""
    return Combine(
        children=(
            Leaf(channel, Variation(DEFAULT_VARIATION_WINDOW)),
            Leaf(channel, DataDriven(FUCOD_SOURCE)),
        ),
        op=Operator.MIN,
    )


@dataclass(frozen=True)
class RunConfig:
    assessments: Mapping[str, AssessmentNode] = field(default_factory=dict)
    fucod: FucodConfig = field(default_factory=FucodConfig)
    orders: Mapping[str, OrderSpec] = field(default_factory=dict)
    profiles: Mapping[str, CustomerProfile] = field(default_factory=dict)

    def __post_init__(self) -> None:
        unknown = set(self.assessments) - set(CHANNELS)
        if unknown:
            raise InputError(f"assessments for unknown channels: {sorted(unknown)}")
        for ch, tree in self.assessments.items():
            bad = tree_channels(tree) - set(CHANNELS)
            if bad:
                raise InputError(f"assessment for {ch} references unknown channels {sorted(bad)}")
        for order in self.orders.values():
            bad = set(order.bands) - set(CHANNELS)
            if bad:
                raise InputError(f"order {order.order_id} constrains unknown channels {sorted(bad)}")

    def assessment(self, channel: str) -> AssessmentNode:
        return self.assessments.get(channel) or default_assessment(channel)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> RunConfig:
        if not isinstance(doc, Mapping):
            raise InputError("run configuration must be a JSON object")
        try:
            orders = [OrderSpec.from_dict(o) for o in doc.get("orders", [])]
            profiles = [CustomerProfile.from_dict(p) for p in doc.get("profiles", [])]
            return cls(
                assessments={
                    ch: tree_from_dict(t, ch) for ch, t in doc.get("assessments", {}).items()
                },
                fucod=FucodConfig.from_dict(doc.get("fucod")),
                orders={o.order_id: o for o in orders},
                profiles={p.customer_id: p for p in profiles},
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise InputError(f"malformed run configuration: {exc!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "assessments": {ch: tree_to_dict(t) for ch, t in sorted(self.assessments.items())},
            "fucod": self.fucod.to_dict(),
            "orders": [o.to_dict() for _, o in sorted(self.orders.items())],
            "profiles": [p.to_dict() for _, p in sorted(self.profiles.items())],
        }


def run_qgs(
    coil: CoilRecord, config: RunConfig | None = None
) -> tuple[QualityRecord, FucodResult]:
    cfg = config or RunConfig()
    result = fucod_run(feature_matrix(coil), cfg.fucod)
    external = {FUCOD_SOURCE: 1.0 - result.levels}
    pv = {ch: eval_assessment(cfg.assessment(ch), coil, external) for ch in CHANNELS}
    record = QualityRecord(
        coil_id=coil.coil_id,
        positions_m=coil.positions_m,
        values={ch: channel_series(coil, ch) for ch in CHANNELS},
        pv=pv,
        combined_pv=np.vstack([pv[ch] for ch in CHANNELS]).min(axis=0),
        outlier_levels=result.levels,
        detector_scores=result.scores,
    )
    return record, result
