"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 input/validation error, 3 protocol
error. Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from coilqa.errors import CoilQAError, InputError, ProtocolError
from coilqa.ingest import (
    Anomaly,
    params_from_dict,
    parse_coil_csv,
    synth_coil,
    write_coil_csv,
    write_labels_csv,
)
from coilqa.model import (
    AllocationDecision,
    CustomerProfile,
    OrderSpec,
    QualityRecord,
    parse_utc,
)
from coilqa.qas import allocate, build_certificate, build_feedback
from coilqa.qgs import RunConfig, run_qgs
from coilqa.qxs import (
    AuditLog,
    ExchangeHandler,
    canonical_json,
    decode_certificate,
    decode_feedback,
    encode_certificate,
    encode_feedback,
    send_certificate,
    send_feedback,
    serve,
)

log = logging.getLogger("coilqa")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_PROTOCOL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# file helpers


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def read_json(path: str) -> Any:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path} is not a JSON document: {exc}") from exc


def _emit(data: bytes, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
        return
    try:
        Path(out).write_bytes(data)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc.strerror}") from exc


def _emit_json(doc: Any, out: str | None) -> None:
    _emit(canonical_json(doc) + b"\n", out)


def _load_record(path: str) -> QualityRecord:
    return QualityRecord.from_dict(read_json(path))


def _load_order(args: argparse.Namespace) -> OrderSpec:
    if args.order:
        return OrderSpec.from_dict(read_json(args.order))
    if args.config and args.order_id:
        cfg = RunConfig.from_dict(read_json(args.config))
        if args.order_id not in cfg.orders:
            raise InputError(f"order {args.order_id} not found in {args.config}")
        return cfg.orders[args.order_id]
    raise UsageError("give --order FILE, or --config FILE with --order-id")


def _parse_anomaly(text: str) -> Anomaly:
    """KIND:CHANNEL:START[:LENGTH[:MAGNITUDE]]"""
    parts = text.split(":")
    if not 3 <= len(parts) <= 5:
        raise UsageError(f"--anomaly expects KIND:CHANNEL:START[:LENGTH[:MAGNITUDE]], got {text!r}")
    try:
        return Anomaly(
            kind=parts[0].upper(),
            channel=parts[1],
            start=int(parts[2]),
            length=int(parts[3]) if len(parts) > 3 else 1,
            magnitude=float(parts[4]) if len(parts) > 4 else 0.0,
        )
    except ValueError as exc:
        raise UsageError(f"bad --anomaly {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args: argparse.Namespace) -> int:
    doc: dict[str, Any] = read_json(args.params) if args.params else {}
    for key, value in (
        ("seed", args.seed),
        ("n_samples", args.samples),
        ("width", args.width),
        ("sample_step_m", args.step),
        ("coil_id", args.coil_id),
    ):
        if value is not None:
            doc[key] = value
    params = params_from_dict(doc)
    if args.anomaly:
        params = dataclasses.replace(params, anomalies=(*params.anomalies, *args.anomaly))
    coil, labels = synth_coil(params)
    _emit(write_coil_csv(coil), args.output)
    if args.labels:
        _emit(write_labels_csv(labels), args.labels)
    log.info("generated coil %s: N=%d W=%d, %d labels", coil.coil_id, coil.n_samples, coil.width, len(labels))
    return EXIT_OK


def cmd_qgs(args: argparse.Namespace) -> int:
    coil = parse_coil_csv(_read_bytes(args.coil))
    config = RunConfig.from_dict(read_json(args.config)) if args.config else RunConfig()
    record, result = run_qgs(coil, config)
    _emit_json(record.to_dict(), args.output)
    log.info(
        "coil %s: %d of %d samples flagged as outliers",
        coil.coil_id,
        record.outlier_count(),
        record.n_samples,
    )
    return EXIT_OK


def cmd_allocate(args: argparse.Namespace) -> int:
    decision = allocate(_load_record(args.record), _load_order(args))
    _emit_json(decision.to_dict(), args.output)
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    record = _load_record(args.record)
    decision = AllocationDecision.from_dict(read_json(args.decision))
    profile = CustomerProfile.from_dict(read_json(args.profile))
    generated_at = (
        parse_utc(args.generated_at) if args.generated_at else datetime.now(timezone.utc)
    )
    cert = build_certificate(record, decision, profile, generated_at, args.certificate_id)
    _emit(encode_certificate(cert) + b"\n", args.output)
    return EXIT_OK


def cmd_feedback(args: argparse.Namespace) -> int:
    report = build_feedback(_load_record(args.record), _load_order(args), args.certificate_id or "")
    _emit(encode_feedback(report) + b"\n", args.output)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    record = _load_record(args.record)
    s = record.detector_scores
    header = ["index", "pos_m"]
    for ch in record.channels:
        header += [ch, f"pv_{ch}"]
    header += ["combined_pv", "grubbs", "distance", "cluster", "lof", "outlier_level"]
    lines = [",".join(header)]
    for i in range(record.n_samples):
        row: list[Any] = [i, record.positions_m[i]]
        for ch in record.channels:
            row += [record.values[ch][i], record.pv[ch][i]]
        row += [
            record.combined_pv[i],
            s.grubbs[i],
            s.distance[i],
            s.cluster[i],
            s.lof[i],
            record.outlier_levels[i],
        ]
        lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row))
    _emit(("\n".join(lines) + "\n").encode("utf-8"), args.output)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    orders: set[str] = set()
    if args.config:
        orders |= set(RunConfig.from_dict(read_json(args.config)).orders)
    for path in args.order or ():
        orders.add(OrderSpec.from_dict(read_json(path)).order_id)

    inbox = Path(args.inbox) if args.inbox else None
    if inbox is not None:
        inbox.mkdir(parents=True, exist_ok=True)

    def keep_cert(cert: Any) -> None:
        if inbox is not None:
            (inbox / f"{cert.certificate_id}.cert.json").write_bytes(encode_certificate(cert))

    def keep_feedback(report: Any) -> None:
        if inbox is not None:
            name = f"{report.certificate_id or report.coil_id}.feedback.json"
            (inbox / name).write_bytes(encode_feedback(report))

    handler = ExchangeHandler(orders, on_certificate=keep_cert, on_feedback=keep_feedback)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    peer = serve(args.bind, handler, AuditLog(args.audit_log), io_timeout=args.timeout)
    host, port = peer.address
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        peer.close()
        log.info("served %d requests", len(peer.audit))
    return EXIT_OK


def cmd_send_cert(args: argparse.Namespace) -> int:
    cert = decode_certificate(_read_bytes(args.cert))
    ack = send_certificate(args.to, cert, timeout=args.timeout)
    _emit_json({"certificate_id": ack.certificate_id, "status": ack.status.value}, args.output)
    return EXIT_OK


def cmd_send_feedback(args: argparse.Namespace) -> int:
    report = decode_feedback(_read_bytes(args.feedback))
    ack = send_feedback(args.to, report, timeout=args.timeout)
    _emit_json({"certificate_id": ack.certificate_id, "status": ack.status.value}, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coilqa", description="Coil quality supervision toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic coil and its anomaly labels")
    g.add_argument("--seed", type=int)
    g.add_argument("--samples", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--step", type=float, help="sample step in metres")
    g.add_argument("--coil-id")
    g.add_argument("--params", help="JSON generator parameters (flags override)")
    g.add_argument(
        "--anomaly",
        action="append",
        type=_parse_anomaly,
        metavar="KIND:CH:START[:LEN[:MAG]]",
        help="inject SPIKE, STUCK or SURFACE_BURST (repeatable)",
    )
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--labels")
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("qgs", help="coil CSV -> quality record (PVs + outlier levels)")
    q.add_argument("--coil", required=True)
    q.add_argument("--config")
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_qgs)

    for name, func, help_ in (
        ("allocate", cmd_allocate, "decide whether a coil fits an order"),
        ("feedback", cmd_feedback, "build the supplier feedback report"),
    ):
        a = sub.add_parser(name, help=help_)
        a.add_argument("--record", required=True)
        a.add_argument("--order", help="order JSON document")
        a.add_argument("--config", help="run configuration holding orders")
        a.add_argument("--order-id")
        if name == "feedback":
            a.add_argument("--certificate-id")
        a.add_argument("-o", "--output")
        a.set_defaults(func=func)

    c = sub.add_parser("certify", help="record + decision + profile -> certificate")
    c.add_argument("--record", required=True)
    c.add_argument("--decision", required=True)
    c.add_argument("--profile", required=True)
    c.add_argument("--generated-at", help="UTC timestamp YYYY-MM-DDTHH:MM:SSZ (for reproducible output)")
    c.add_argument("--certificate-id")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("serve", help="run an exchange peer")
    s.add_argument("--bind", default="127.0.0.1:0")
    s.add_argument("--order", action="append", help="order JSON whose id is accepted (repeatable)")
    s.add_argument("--config", help="run configuration whose orders are accepted")
    s.add_argument("--audit-log")
    s.add_argument("--inbox", help="directory for received documents")
    s.add_argument("--timeout", type=float, default=10.0)
    s.set_defaults(func=cmd_serve)

    sc = sub.add_parser("send-cert", help="send a certificate to a peer")
    sc.add_argument("--to", required=True, metavar="HOST:PORT")
    sc.add_argument("--cert", required=True)
    sc.add_argument("--timeout", type=float, default=10.0)
    sc.add_argument("-o", "--output")
    sc.set_defaults(func=cmd_send_cert)

    sf = sub.add_parser("send-feedback", help="send a feedback report to a peer")
    sf.add_argument("--to", required=True, metavar="HOST:PORT")
    sf.add_argument("--feedback", required=True)
    sf.add_argument("--timeout", type=float, default=10.0)
    sf.add_argument("-o", "--output")
    sf.set_defaults(func=cmd_send_feedback)

    r = sub.add_parser("report", help="per-sample CSV of values, PVs and detector scores")
    r.add_argument("--record", required=True)
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"protocol error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except CoilQAError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
