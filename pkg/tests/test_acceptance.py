"""Acceptance suite.

Each test carries a ``criterion`` marker; the conftest hook prints one
PASS/FAIL line per criterion at the end of the run. Run alone with
``pytest tests/test_acceptance.py``.
"""

import itertools
import json
import signal
import socket
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

import oracles
from coilqa.fucod import fucod_run
from coilqa.fucod.detectors import distance_scores, grubbs_critical, lof_scores
from coilqa.fucod.fis import OUT_HIGH, OUT_LOW, fis_fuse, fis_fuse_detailed, rule_strengths
from coilqa.ingest import Anomaly, SynthParams, feature_matrix, synth_coil
from coilqa.model import (
    CustomerProfile,
    DetectorScores,
    Intimacy,
    OrderSpec,
    QualityRecord,
    Verdict,
)
from coilqa.plausibility import Constant, eval_constant, eval_fuzzy, eval_threshold, eval_variation
from coilqa.qas import allocate, build_certificate
from coilqa.qgs import run_qgs
from coilqa.qxs import (
    AckStatus,
    MsgType,
    decode_certificate,
    encode_certificate,
    field_paths,
    send_certificate,
    unframe,
)

criterion = pytest.mark.criterion


# ---------------------------------------------------------------------------
# 1. analytic plausibility measures

MEASURE_CASES = [
    (lambda: eval_constant(Constant(0.7)), 0.7),
    (lambda: eval_constant(Constant(0.0)), 0.0),
    (lambda: eval_constant(Constant(1.0)), 1.0),
    (lambda: eval_threshold(5, 1, 10), 1.0),
    (lambda: eval_threshold(0.5, 1, 10), 0.0),
    (lambda: eval_threshold(1, 1, 10), 1.0),
    (lambda: eval_fuzzy(1.5, 1, 2, 3, 4), 0.5),
    (lambda: eval_fuzzy(2.5, 1, 2, 3, 4), 1.0),
    (lambda: eval_fuzzy(4.0, 1, 2, 3, 4), 0.0),
    (lambda: eval_variation([3, 3, 3, 3], 3), [1, 1, 0, 0]),
    (lambda: eval_variation([1, 2, 3], 3), [1, 1, 1]),
    (lambda: eval_variation([1, 1, 2, 2, 2], 2), [1, 0, 1, 0, 0]),
]


@criterion(1, "plausibility measure examples, fuzzy/threshold degeneration, < 1 s")
def test_c1_measures():
    start = time.perf_counter()
    for fn, expected in MEASURE_CASES:
        got = np.atleast_1d(np.asarray(fn(), dtype=float))
        assert got.shape == np.atleast_1d(expected).shape
        assert np.max(np.abs(got - np.asarray(expected, dtype=float))) <= 1e-12

    rng = np.random.default_rng(1)
    # draw x on a coarse grid as well so that boundary hits actually occur
    x = np.where(rng.random(100_000) < 0.5, rng.normal(0, 3, 100_000), rng.integers(-6, 7, 100_000))
    lo = rng.integers(-4, 3, 100_000).astype(float)
    hi = lo + rng.integers(0, 4, 100_000)
    for xi, a, b in zip(x.tolist(), lo.tolist(), hi.tolist()):
        assert eval_fuzzy(xi, a, a, b, b) == eval_threshold(xi, a, b)
    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# 2 and 3. neighbourhood detectors against brute-force oracles


def corpus():
    """100 seeded datasets, N in [20, 300], 1 to 4 dims, mixed shapes."""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 301))
        dims = int(rng.integers(1, 5))
        kind = seed % 3
        if kind == 0:
            x = rng.normal(size=(n, dims))
        elif kind == 1:
            centres = rng.normal(0, 6, size=(3, dims))
            x = centres[rng.integers(0, 3, n)] + rng.normal(size=(n, dims))
        else:
            x = rng.uniform(-1, 1, size=(n, dims))
            x[: max(1, n // 50)] *= 8.0
        yield seed, x


CORPUS = list(corpus())
K = 10


@criterion(2, "LOF matches brute-force oracle within 1e-9 on 100 datasets")
def test_c2_lof_oracle():
    worst = 0.0
    for _, x in CORPUS:
        raw = lof_scores(x, K).raw
        ref = np.array(oracles.lof_bruteforce(x.tolist(), K))
        worst = max(worst, float(np.max(np.abs(raw - ref))))
    assert worst <= 1e-9


@criterion(3, "kNN mean distances equal the brute-force oracle exactly")
def test_c3_knn_oracle():
    for _, x in CORPUS:
        raw = distance_scores(x, K).raw
        assert raw.tolist() == oracles.knn_mean_distance(x.tolist(), K)


# ---------------------------------------------------------------------------
# 4. Grubbs critical values


@criterion(4, "Grubbs critical values within 0.01 of the published table")
@pytest.mark.parametrize("n", [5, 10, 20])
def test_c4_grubbs(n):
    assert abs(grubbs_critical(n, 0.05) - oracles.GRUBBS_TABLE_005[n]) <= 0.01


# ---------------------------------------------------------------------------
# 5. fuzzy fusion


@criterion(5, "FIS corner coverage, corner centroids, no fallback over 1e5 inputs")
def test_c5_fis():
    corners = np.array(list(itertools.product([0.0, 1.0], repeat=4)))
    assert np.all(rule_strengths(corners).max(axis=1) == 1.0)
    lo, hi = fis_fuse(np.array([[0.0] * 4, [1.0] * 4]))
    assert abs(lo - 0.156) <= 0.01 and abs(lo - oracles.trapezoid_centroid(*OUT_LOW)) <= 0.01
    assert abs(hi - 0.844) <= 0.01 and abs(hi - oracles.trapezoid_centroid(*OUT_HIGH)) <= 0.01
    res = fis_fuse_detailed(np.random.default_rng(5).random((100_000, 4)))
    assert not res.fallback.any()


# ---------------------------------------------------------------------------
# 6 and 7. end-to-end detection and runtime

SPIKES = (("p1", 1234), ("p2", 3456), ("p3", 5678), ("p1", 7890), ("p2", 9012))


@pytest.fixture(scope="module")
def spiked_coil():
    anomalies = tuple(Anomaly("SPIKE", ch, i, 1, 10.0) for ch, i in SPIKES)
    return synth_coil(SynthParams(seed=42, n_samples=10_000, width=64, anomalies=anomalies))


@pytest.fixture(scope="module")
def spiked_run(spiked_coil):
    coil, labels = spiked_coil
    features = feature_matrix(coil)
    start = time.perf_counter()
    result = fucod_run(features)
    return labels, result, time.perf_counter() - start


@criterion(6, "5 ten-sigma spikes reach level >= 0.5, flagged fraction in [0.01%, 0.1%]")
def test_c6_detection(spiked_run):
    labels, result, _ = spiked_run
    assert [lb.index for lb in labels] == sorted(i for _, i in SPIKES)
    assert all(result.levels[lb.index] >= 0.5 for lb in labels)
    frac = float(result.flagged(0.5).mean())
    assert 1e-4 <= frac <= 1e-3


@criterion(7, "fucod_run on N = 10,000 finishes in under 25 s")
def test_c7_runtime(spiked_run):
    *_, elapsed = spiked_run
    print(f"fucod_run took {elapsed:.2f} s")
    assert elapsed < 25.0


# ---------------------------------------------------------------------------
# 8. stuck sensor chain


@criterion(8, "stuck run zeroes variation PV past warm-up and allocation says INSUFFICIENT_DATA")
def test_c8_stuck_chain():
    start, length, window = 300, 50, 10
    coil, _ = synth_coil(
        SynthParams(seed=8, n_samples=800, width=8, anomalies=(Anomaly("STUCK", "p2", start, length),))
    )
    pv = eval_variation(coil.p2, window)
    run = slice(start + window - 1, start + length)
    assert np.all(pv[run] == 0.0)
    assert np.all(pv[: start] == 1.0) and np.all(pv[start + length :] == 1.0)

    record, _ = run_qgs(coil)
    assert np.all(record.pv["p2"][run] == 0.0)
    order = OrderSpec("O-8", "K-8", {"p2": (0.0, 1e6)}, data_sufficiency=0.95)
    # 41 untrusted samples in 800 leave 94.9% trusted, below the gate
    decision = allocate(record, order)
    assert decision.verdict is Verdict.INSUFFICIENT_DATA
    assert [r.channel for r in decision.reasons] == ["p2"]


# ---------------------------------------------------------------------------
# 9. exchange between two processes

ORDER = {"order_id": "O-9", "customer_id": "K-9", "bands": {"p1": [0.0, 1.0]}}


def cli(*args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "coilqa", *args], cwd=cwd, capture_output=True, text=True, check=True
    )


@pytest.fixture
def customer(tmp_path):
    (tmp_path / "order.json").write_text(json.dumps(ORDER))
    proc = subprocess.Popen(
        [sys.executable, "-m", "coilqa", "serve", "--bind", "127.0.0.1:0", "--order", "order.json",
         "--audit-log", "audit.log"],
        cwd=tmp_path,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        line = proc.stderr.readline()
        assert line.startswith("listening on "), line
        host, port = line.split()[-1].rsplit(":", 1)
        yield proc, (host, int(port))
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)
        proc.stderr.close()


@criterion(9, "serve and send-cert/send-feedback across processes, 100 concurrent, garbage survives")
def test_c9_exchange(tmp_path, customer):
    proc, addr = customer
    to = f"{addr[0]}:{addr[1]}"
    cli("gen", "--seed", "9", "--samples", "300", "--width", "4", "-o", "coil.csv", cwd=tmp_path)
    cli("qgs", "--coil", "coil.csv", "-o", "record.json", cwd=tmp_path)
    cli("allocate", "--record", "record.json", "--order", "order.json", "-o", "d.json", cwd=tmp_path)
    (tmp_path / "profile.json").write_text(json.dumps({"customer_id": "K-9", "intimacy": "STANDARD"}))
    cli("certify", "--record", "record.json", "--decision", "d.json", "--profile", "profile.json",
        "-o", "cert.json", cwd=tmp_path)
    cert_id = json.loads((tmp_path / "cert.json").read_text())["certificate_id"]
    cli("feedback", "--record", "record.json", "--order", "order.json", "--certificate-id", cert_id,
        "-o", "fb.json", cwd=tmp_path)

    ack = json.loads(cli("send-cert", "--to", to, "--cert", "cert.json", cwd=tmp_path).stdout)
    assert ack == {"certificate_id": cert_id, "status": "ACCEPTED"}
    ack = json.loads(cli("send-feedback", "--to", to, "--feedback", "fb.json", cwd=tmp_path).stdout)
    assert ack == {"certificate_id": cert_id, "status": "ACCEPTED"}

    base = decode_certificate((tmp_path / "cert.json").read_bytes())
    certs = [type(base)(**{**base.__dict__, "certificate_id": f"c-{i:03d}"}) for i in range(100)]
    with ThreadPoolExecutor(max_workers=100) as pool:
        acks = list(pool.map(lambda c: send_certificate(addr, c, timeout=20), certs))
    assert sorted(a.certificate_id for a in acks) == [c.certificate_id for c in certs]
    assert all(a.status is AckStatus.ACCEPTED for a in acks)

    with socket.create_connection(addr, timeout=5) as s:
        s.sendall(b"\x00\xffnot a frame")
        s.shutdown(socket.SHUT_WR)
        reply = unframe(s.makefile("rb"))
    assert reply.msg_type is MsgType.ERROR
    assert send_certificate(addr, base).status is AckStatus.ACCEPTED
    assert proc.poll() is None

    audit = (tmp_path / "audit.log").read_text().splitlines()
    assert len(audit) == 104


# ---------------------------------------------------------------------------
# 10. canonical certificates

TEXT = "abcXYZ-_.:/ äöüßé中文🙂"


def random_text(rng, lo=1, hi=12):
    return "".join(rng.choice(list(TEXT), int(rng.integers(lo, hi))))


def random_record(rng):
    n = int(rng.integers(1, 25))
    scale = 10.0 ** rng.integers(-300, 300, size=4)
    values = {ch: rng.normal(size=n) * s for ch, s in zip(["p1", "p2", "p3", "p4"], scale)}
    if rng.random() < 0.2:
        values["p1"][0] = -0.0
    pv = {ch: np.where(rng.random(n) < 0.3, rng.integers(0, 2, n), rng.random(n)).astype(float) for ch in values}
    levels = rng.random(n)
    zeros = np.zeros(n)
    return QualityRecord(
        coil_id=random_text(rng),
        positions_m=np.cumsum(rng.random(n) + 1e-3),
        values=values,
        pv=pv,
        combined_pv=np.vstack(list(pv.values())).min(axis=0),
        outlier_levels=levels,
        detector_scores=DetectorScores(zeros, zeros, zeros, zeros),
    )


def random_order(rng, customer):
    bands = {}
    for ch in rng.choice(["p1", "p2", "p3", "p4"], int(rng.integers(1, 5)), replace=False):
        lo = float(rng.normal() * 10.0 ** rng.integers(-3, 3))
        bands[str(ch)] = (lo, lo + float(rng.random() * 10.0 ** rng.integers(-3, 300)))
    return OrderSpec(random_text(rng), customer, bands, pv_threshold=float(rng.random()),
                     data_sufficiency=float(rng.random()), coverage_req=float(rng.random()))


@criterion(10, "encode/decode/encode byte-identical on 1,000 certificates, BASIC < STANDARD < FULL")
def test_c10_canonical():
    rng = np.random.default_rng(10)
    epoch = datetime(2020, 1, 1, tzinfo=timezone.utc)
    seen = set()
    for _ in range(1000):
        record = random_record(rng)
        customer = random_text(rng)
        order = random_order(rng, customer)
        decision = allocate(record, order)
        when = epoch + timedelta(seconds=int(rng.integers(0, 10**9)))
        certs = {
            level: build_certificate(record, decision, CustomerProfile(customer, level), when)
            for level in Intimacy
        }
        level = Intimacy(rng.choice([lv.value for lv in Intimacy]))
        data = encode_certificate(certs[level])
        assert encode_certificate(decode_certificate(data)) == data
        seen.add((level, decision.verdict))

        paths = {lv: field_paths(json.loads(encode_certificate(c))) for lv, c in certs.items()}
        assert paths[Intimacy.BASIC] < paths[Intimacy.STANDARD] < paths[Intimacy.FULL]
    assert {lv for lv, _ in seen} == set(Intimacy)
