"""Certificate/feedback exchange between supplier and customer peers.

Documents are canonical JSON (sorted keys, no insignificant whitespace,
UTF-8, shortest round-trip numbers). On the wire each message is framed as::

    b"Q4X1" | type (1 byte) | payload length (uint32, big-endian) | payload

A connection carries exactly one request frame and one response frame.
"""

from __future__ import annotations

import io
import json
import logging
import socket
import socketserver
import struct
import threading
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, BinaryIO

from coilqa.errors import InputError, ProtocolError
from coilqa.model import (
    CERT_SCHEMA_VERSION,
    FeedbackReport,
    QualityCertificate,
    format_utc,
    parse_utc,
)

logger = logging.getLogger(__name__)

MAGIC = b"Q4X1"
HEADER = struct.Struct(">4sBI")
MAX_PAYLOAD = 16 * 1024 * 1024
DEFAULT_TIMEOUT = 10.0


class MsgType(IntEnum):
    CERT = 0x01
    CERT_ACK = 0x02
    FEEDBACK = 0x03
    FEEDBACK_ACK = 0x04
    ERROR = 0x05


class AckStatus(str, Enum):
    ACCEPTED = "ACCEPTED"
    MALFORMED = "MALFORMED"
    UNKNOWN_ORDER = "UNKNOWN_ORDER"


# ---------------------------------------------------------------------------
# Errors


class DocumentError(InputError):
    code = "MALFORMED_DOCUMENT"


class MalformedDocument(DocumentError):
    code = "MALFORMED_DOCUMENT"


class UnsupportedSchemaVersion(DocumentError):
    code = "UNSUPPORTED_SCHEMA_VERSION"


class MissingField(DocumentError):
    code = "MISSING_FIELD"

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"missing field {name!r}")


class FramingError(ProtocolError):
    """``code`` is one of BAD_MAGIC, UNKNOWN_TYPE, FRAME_TRUNCATED, FRAME_TOO_LARGE."""


class ConnectFailed(ProtocolError):
    code = "CONNECT_FAILED"


class ExchangeTimeout(ProtocolError):
    code = "TIMEOUT"


class BindFailed(ProtocolError):
    code = "BIND_FAILED"


# ---------------------------------------------------------------------------
# Canonical documents


def canonical_json(doc: Any) -> bytes:
    try:
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except ValueError as exc:
        raise InputError(f"document is not encodable as canonical JSON: {exc}") from exc
    return text.encode("utf-8")


def _reject_constant(name: str) -> Any:
    raise MalformedDocument(f"non-finite number {name} in document")


def _load_object(data: bytes) -> dict[str, Any]:
    try:
        doc = json.loads(data.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("document root must be a JSON object")
    return doc


_CERT_REQUIRED = (
    "certificate_id",
    "coil_id",
    "order_id",
    "customer_id",
    "intimacy",
    "verdict",
    "channels",
    "generated_at",
)


def certificate_to_dict(cert: QualityCertificate) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema_version": cert.schema_version,
        "certificate_id": cert.certificate_id,
        "coil_id": cert.coil_id,
        "order_id": cert.order_id,
        "customer_id": cert.customer_id,
        "intimacy": cert.intimacy.value,
        "verdict": cert.verdict.value,
        "channels": cert.channels,
        "generated_at": format_utc(cert.generated_at),
    }
    if cert.outlier_summary is not None:
        doc["outlier_summary"] = cert.outlier_summary
    if cert.positions_m is not None:
        doc["positions_m"] = list(cert.positions_m)
    return doc


def encode_certificate(cert: QualityCertificate) -> bytes:
    return canonical_json(certificate_to_dict(cert))


def decode_certificate(data: bytes) -> QualityCertificate:
    doc = _load_object(data)
    if "schema_version" not in doc:
        raise MissingField("schema_version")
    if doc["schema_version"] != CERT_SCHEMA_VERSION:
        raise UnsupportedSchemaVersion(f"unsupported schema version {doc['schema_version']!r}")
    for name in _CERT_REQUIRED:
        if name not in doc:
            raise MissingField(name)
    if not isinstance(doc["channels"], dict):
        raise MalformedDocument("'channels' must be an object")
    summary = doc.get("outlier_summary")
    if summary is not None and not isinstance(summary, dict):
        raise MalformedDocument("'outlier_summary' must be an object")
    try:
        return QualityCertificate(
            certificate_id=doc["certificate_id"],
            coil_id=doc["coil_id"],
            order_id=doc["order_id"],
            customer_id=doc["customer_id"],
            intimacy=doc["intimacy"],
            verdict=doc["verdict"],
            channels=doc["channels"],
            generated_at=parse_utc(doc["generated_at"]),
            outlier_summary=summary,
            positions_m=doc.get("positions_m"),
            schema_version=doc["schema_version"],
        )
    except (InputError, ValueError, TypeError) as exc:
        raise MalformedDocument(str(exc)) from exc


def encode_feedback(report: FeedbackReport) -> bytes:
    return canonical_json(report.to_dict())


def decode_feedback(data: bytes) -> FeedbackReport:
    doc = _load_object(data)
    for name in ("certificate_id", "coil_id", "items"):
        if name not in doc:
            raise MissingField(name)
    try:
        return FeedbackReport.from_dict(doc)
    except InputError as exc:
        raise MalformedDocument(str(exc)) from exc


@dataclass(frozen=True)
class Ack:
    certificate_id: str
    status: AckStatus

    def encode(self) -> bytes:
        return canonical_json({"certificate_id": self.certificate_id, "status": self.status.value})

    @classmethod
    def decode(cls, data: bytes) -> Ack:
        doc = _load_object(data)
        try:
            return cls(str(doc["certificate_id"]), AckStatus(doc["status"]))
        except (KeyError, ValueError) as exc:
            raise MalformedDocument(f"bad acknowledgement: {exc!r}") from exc


# ---------------------------------------------------------------------------
# Framing


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes


def frame(msg_type: MsgType | int, payload: bytes) -> bytes:
    try:
        t = MsgType(msg_type)
    except ValueError as exc:
        raise FramingError(f"unknown message type {msg_type!r}", code="UNKNOWN_TYPE") from exc
    if len(payload) > MAX_PAYLOAD:
        raise FramingError(f"payload of {len(payload)} bytes exceeds 16 MiB", code="FRAME_TOO_LARGE")
    return HEADER.pack(MAGIC, t, len(payload)) + payload


def _read_exactly(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def unframe(stream: BinaryIO | bytes | bytearray) -> WireMessage:
    """Read one frame; consumes exactly header + payload bytes."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    head = _read_exactly(stream, HEADER.size)
    if len(head) < HEADER.size:
        raise FramingError(f"stream ended after {len(head)} header bytes", code="FRAME_TRUNCATED")
    magic, t, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}", code="BAD_MAGIC")
    try:
        msg_type = MsgType(t)
    except ValueError as exc:
        raise FramingError(f"unknown message type 0x{t:02x}", code="UNKNOWN_TYPE") from exc
    if length > MAX_PAYLOAD:
        raise FramingError(f"declared payload of {length} bytes exceeds 16 MiB", code="FRAME_TOO_LARGE")
    payload = _read_exactly(stream, length)
    if len(payload) < length:
        raise FramingError(
            f"stream ended after {len(payload)} of {length} payload bytes", code="FRAME_TRUNCATED"
        )
    return WireMessage(msg_type, payload)


def error_payload(code: str, detail: str) -> bytes:
    return canonical_json({"error": code, "detail": detail})


# ---------------------------------------------------------------------------
# Server


class AuditLog:
    """Append-only event log shared by all connections."""

    def __init__(self, path: str | Path | None = None) -> None:
        self._lock = threading.Lock()
        self._lines: list[str] = []
        self._path = Path(path) if path is not None else None

    def record(self, direction: str, msg_type: str, certificate_id: str, status: str) -> None:
        ts = format_utc(datetime.now(timezone.utc))
        line = f"{ts} {direction} {msg_type} {certificate_id or '-'} {status}"
        with self._lock:
            self._lines.append(line)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

    @property
    def lines(self) -> list[str]:
        with self._lock:
            return list(self._lines)

    def __len__(self) -> int:
        with self._lock:
            return len(self._lines)


class ExchangeHandler:
    """Request logic of a peer.

    Certificates are accepted when their order is known. Feedback reports
    are accepted when well formed. ``on_certificate``/``on_feedback``
    callbacks receive each accepted document.
    """

    def __init__(
        self,
        known_orders: Iterable[str] = (),
        on_certificate: Callable[[QualityCertificate], None] | None = None,
        on_feedback: Callable[[FeedbackReport], None] | None = None,
    ) -> None:
        self.known_orders = frozenset(known_orders)
        self.on_certificate = on_certificate
        self.on_feedback = on_feedback

    def certificate(self, payload: bytes) -> Ack:
        try:
            cert = decode_certificate(payload)
        except DocumentError:
            return Ack(_salvage_id(payload), AckStatus.MALFORMED)
        if cert.order_id not in self.known_orders:
            return Ack(cert.certificate_id, AckStatus.UNKNOWN_ORDER)
        if self.on_certificate is not None:
            self.on_certificate(cert)
        return Ack(cert.certificate_id, AckStatus.ACCEPTED)

    def feedback(self, payload: bytes) -> Ack:
        try:
            report = decode_feedback(payload)
        except DocumentError:
            return Ack(_salvage_id(payload), AckStatus.MALFORMED)
        if self.on_feedback is not None:
            self.on_feedback(report)
        return Ack(report.certificate_id, AckStatus.ACCEPTED)

    def respond(self, msg: WireMessage) -> tuple[MsgType, bytes, str, str]:
        """Response type and payload plus the audit id/status for one request."""
        if msg.msg_type is MsgType.CERT:
            ack = self.certificate(msg.payload)
            return MsgType.CERT_ACK, ack.encode(), ack.certificate_id, ack.status.value
        if msg.msg_type is MsgType.FEEDBACK:
            ack = self.feedback(msg.payload)
            return MsgType.FEEDBACK_ACK, ack.encode(), ack.certificate_id, ack.status.value
        detail = f"{msg.msg_type.name} is not a request type"
        return MsgType.ERROR, error_payload("UNEXPECTED_TYPE", detail), "", "UNEXPECTED_TYPE"


def _salvage_id(payload: bytes) -> str:
    try:
        cid = json.loads(payload.decode("utf-8")).get("certificate_id", "")
    except (ValueError, AttributeError):
        return ""
    return cid if isinstance(cid, str) else ""


class _ConnectionHandler(socketserver.StreamRequestHandler):
    server: _ThreadingServer

    def handle(self) -> None:
        self.request.settimeout(self.server.io_timeout)
        peer: ExchangeHandler = self.server.exchange
        audit = self.server.audit
        try:
            msg = unframe(self.rfile)
        except FramingError as exc:
            audit.record("recv", "-", "", exc.code)
            self._reply(MsgType.ERROR, error_payload(exc.code, str(exc)))
            return
        except (TimeoutError, OSError) as exc:
            audit.record("recv", "-", "", "TIMEOUT")
            self._reply(MsgType.ERROR, error_payload("TIMEOUT", str(exc)))
            return
        try:
            rtype, payload, cid, status = peer.respond(msg)
        except Exception as exc:  # never drop a client silently
            logger.exception("request handler failed")
            rtype, payload, cid, status = (
                MsgType.ERROR,
                error_payload("INTERNAL", repr(exc)),
                "",
                "INTERNAL",
            )
        # audit before replying so an acked request is always on record
        audit.record("recv", msg.msg_type.name, cid, status)
        self._reply(rtype, payload)

    def _reply(self, msg_type: MsgType, payload: bytes) -> None:
        try:
            self.wfile.write(frame(msg_type, payload))
            self.wfile.flush()
        except OSError as exc:
            logger.warning("could not send %s response: %s", msg_type.name, exc)


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    request_queue_size = 256

    def __init__(self, address: tuple[str, int], exchange: ExchangeHandler, audit: AuditLog, io_timeout: float) -> None:
        self.exchange = exchange
        self.audit = audit
        self.io_timeout = io_timeout
        super().__init__(address, _ConnectionHandler)


class ExchangePeer:
    """A running server; use as a context manager or call :meth:`close`."""

    def __init__(self, server: _ThreadingServer) -> None:
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, name="qxs-serve", daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    @property
    def audit(self) -> AuditLog:
        return self._server.audit

    def wait(self) -> None:
        self._thread.join()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    def __enter__(self) -> ExchangePeer:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise InputError(f"address must look like host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def serve(
    address: str | tuple[str, int],
    handler: ExchangeHandler | None = None,
    audit: AuditLog | None = None,
    io_timeout: float = DEFAULT_TIMEOUT,
) -> ExchangePeer:
    """Start serving in a background thread and return the running peer."""
    try:
        server = _ThreadingServer(
            parse_address(address),
            ExchangeHandler() if handler is None else handler,
            AuditLog() if audit is None else audit,
            io_timeout,
        )
    except OSError as exc:
        raise BindFailed(f"cannot bind {address}: {exc}") from exc
    return ExchangePeer(server)


# ---------------------------------------------------------------------------
# Client


def request(
    address: str | tuple[str, int],
    msg_type: MsgType,
    payload: bytes,
    timeout: float = DEFAULT_TIMEOUT,
) -> WireMessage:
    """Send one frame and return the single response frame."""
    data = frame(msg_type, payload)
    try:
        sock = socket.create_connection(parse_address(address), timeout=timeout)
    except socket.timeout as exc:
        raise ExchangeTimeout(f"connecting to {address} timed out") from exc
    except OSError as exc:
        raise ConnectFailed(f"cannot connect to {address}: {exc}") from exc
    with sock, sock.makefile("rb") as rfile:
        try:
            sock.sendall(data)
            return unframe(rfile)
        except socket.timeout as exc:
            raise ExchangeTimeout(f"no response from {address} within {timeout} s") from exc
        except FramingError as exc:
            raise ProtocolError(f"bad response frame: {exc}") from exc
        except OSError as exc:
            raise ProtocolError(f"connection to {address} failed: {exc}") from exc


def _expect_ack(resp: WireMessage, expected: MsgType) -> Ack:
    if resp.msg_type is MsgType.ERROR:
        raise ProtocolError(f"peer reported an error: {resp.payload.decode('utf-8', 'replace')}")
    if resp.msg_type is not expected:
        raise ProtocolError(f"expected {expected.name}, got {resp.msg_type.name}")
    try:
        return Ack.decode(resp.payload)
    except DocumentError as exc:
        raise ProtocolError(f"unreadable acknowledgement: {exc}") from exc


def send_certificate(
    address: str | tuple[str, int], cert: QualityCertificate, timeout: float = DEFAULT_TIMEOUT
) -> Ack:
    resp = request(address, MsgType.CERT, encode_certificate(cert), timeout)
    return _expect_ack(resp, MsgType.CERT_ACK)


def send_feedback(
    address: str | tuple[str, int], report: FeedbackReport, timeout: float = DEFAULT_TIMEOUT
) -> Ack:
    resp = request(address, MsgType.FEEDBACK, encode_feedback(report), timeout)
    return _expect_ack(resp, MsgType.FEEDBACK_ACK)


def field_paths(doc: Mapping[str, Any], prefix: str = "") -> set[str]:
    """Dotted key paths of nested objects (lists are leaves)."""
    out = set()
    for key, value in doc.items():
        path = f"{prefix}{key}"
        out.add(path)
        if isinstance(value, Mapping):
            out |= field_paths(value, path + ".")
    return out
