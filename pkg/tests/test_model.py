from datetime import datetime, timezone

import numpy as np
import pytest

from coilqa.errors import InputError, ValidationError
from coilqa.model import (
    AllocationDecision,
    CoilRecord,
    CustomerProfile,
    OrderSpec,
    PlausibilityValue,
    QualityCertificate,
    QualityRecord,
    Reason,
    Verdict,
    check_pv_series,
    format_utc,
    parse_utc,
    validate_coil,
)

from conftest import make_record


def coil_doc(n=3, w=2, **overrides):
    doc = {
        "coil_id": "C-1",
        "sample_step_m": 0.5,
        "positions_m": np.arange(n) * 0.5,
        "p1": np.linspace(0, 1, n),
        "p2": np.linspace(1, 2, n),
        "p3": np.linspace(2, 3, n),
        "p4": np.ones((n, w)),
    }
    doc.update(overrides)
    return doc


def test_plausibility_value_range():
    assert PlausibilityValue(0) == 0.0
    assert PlausibilityValue(1) == 1.0
    for bad in (-1e-9, 1.0000001, float("nan")):
        with pytest.raises(InputError):
            PlausibilityValue(bad)
    with pytest.raises(InputError):
        check_pv_series([0.2, 1.5])


def test_valid_record():
    coil = validate_coil(coil_doc())
    assert coil.n_samples == 3 and coil.width == 2
    assert not coil.p1.flags.writeable


def test_length_mismatch():
    with pytest.raises(ValidationError) as exc:
        validate_coil(coil_doc(p2=np.array([1.0, 2.0])))
    assert exc.value.codes == ["LENGTH_MISMATCH"]


def test_duplicate_position_reported_with_index():
    with pytest.raises(ValidationError) as exc:
        validate_coil(coil_doc(positions_m=[0.0, 1.0, 1.0]))
    (issue,) = exc.value.issues
    assert issue.code == "NON_MONOTONE_POSITIONS" and issue.index == 2


def test_all_violations_collected():
    doc = coil_doc(
        positions_m=[0.0, 1.0, 0.5],
        p1=[0.0, float("nan"), 1.0],
        p3=[1.0, 2.0],
    )
    with pytest.raises(ValidationError) as exc:
        validate_coil(doc)
    assert {"NON_MONOTONE_POSITIONS", "NON_FINITE_VALUE", "LENGTH_MISMATCH"} <= set(exc.value.codes)
    nan_issue = next(i for i in exc.value.issues if i.code == "NON_FINITE_VALUE")
    assert nan_issue.field == "p1" and nan_issue.index == 1


def test_missing_fields():
    doc = coil_doc()
    del doc["p4"], doc["coil_id"]
    with pytest.raises(ValidationError) as exc:
        validate_coil(doc)
    assert exc.value.codes == ["MISSING_FIELD", "MISSING_FIELD"]


@pytest.mark.parametrize("bad_id", ["", "a b", "a,b", "a=b"])
def test_bad_coil_ids(bad_id):
    with pytest.raises(ValidationError):
        validate_coil(coil_doc(coil_id=bad_id))


def test_validate_is_idempotent():
    coil = validate_coil(coil_doc())
    again = validate_coil(coil)
    assert again == coil
    assert validate_coil(again) == coil


def test_record_is_immutable():
    coil = validate_coil(coil_doc())
    with pytest.raises(ValueError):
        coil.p1[0] = 5.0
    with pytest.raises(AttributeError):
        coil.coil_id = "other"  # type: ignore[misc]
    assert isinstance(coil, CoilRecord)


def test_quality_record_summary_and_round_trip():
    rec = make_record(
        {"p1": [1.0, 2.0, 3.0, 4.0]},
        pv={"p1": [0.0, 1.0, 1.0, 0.5]},
        levels=[0.0, 0.7, 0.5, 0.2],
    )
    assert rec.outlier_count() == 2
    assert rec.outlier_fraction() == 0.5
    s = rec.channel_summary("p1")
    assert (s.mean, s.min, s.max, s.pv_min, s.pv_mean) == (2.5, 1.0, 4.0, 0.0, 0.625)
    assert QualityRecord.from_dict(rec.to_dict()) == rec


def test_quality_record_rejects_bad_series():
    with pytest.raises(InputError):
        make_record({"p1": [1.0, 2.0]}, levels=[0.0, 1.2])
    with pytest.raises(InputError):
        make_record({"p1": [1.0, 2.0]}, pv={"p1": [1.0]})


def test_order_spec_validation():
    OrderSpec("O", "C", {"p1": (0, 1)})
    with pytest.raises(InputError):
        OrderSpec("O", "C", {"p1": (2, 1)})
    with pytest.raises(InputError):
        OrderSpec("O", "C", {"p1": (0, 1)}, coverage_req=1.5)
    order = OrderSpec("O", "C", {"p1": (0, 1)}, pv_threshold=0.7)
    assert OrderSpec.from_dict(order.to_dict()) == order


def test_profile_intimacy_enumerated():
    assert CustomerProfile("C", "FULL").intimacy.value == "FULL"
    with pytest.raises(InputError):
        CustomerProfile("C", "PLATINUM")


def test_decision_reason_invariant():
    with pytest.raises(InputError):
        AllocationDecision(Verdict.REJECT)
    with pytest.raises(InputError):
        AllocationDecision(Verdict.ACCEPT, (Reason("p1", "X", 0.1, 0.2),))
    d = AllocationDecision(Verdict.REJECT, (Reason("p1", "X", 0.1, 0.2),), "c", "o", "k")
    assert AllocationDecision.from_dict(d.to_dict()) == d


def test_certificate_timestamp_whole_seconds():
    ts = datetime(2024, 3, 1, 12, 30, 15, 999_000, tzinfo=timezone.utc)
    cert = QualityCertificate("id", "c", "o", "k", "BASIC", "ACCEPT", {}, ts)
    assert cert.generated_at.microsecond == 0
    assert format_utc(cert.generated_at) == "2024-03-01T12:30:15Z"
    assert parse_utc("2024-03-01T12:30:15Z") == cert.generated_at
    with pytest.raises(InputError):
        QualityCertificate("id", "c", "o", "k", "BASIC", "ACCEPT", {}, ts, schema_version="q4-cert/2")
