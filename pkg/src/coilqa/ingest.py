"""Coil files, feature construction and a deterministic synthetic-coil generator.

Coil CSV layout::

    # coil_id=<id> sample_step_m=<decimal>
    pos_m,p1,p2,p3,p4_0000,...,p4_<W-1>
    <one row per length position>

Numbers use the shortest decimal form that parses back to the same double,
lines end in LF, and the file ends with exactly one LF.
"""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from coilqa.errors import InputError
from coilqa.model import CoilRecord, validate_coil

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
SIG_DIGITS = 9


class BadHeader(InputError):
    code = "BAD_HEADER"


class BadRow(InputError):
    code = "BAD_ROW"

    def __init__(self, line: int, detail: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {detail}")


class InvalidParams(InputError):
    code = "INVALID_PARAMS"


# ---------------------------------------------------------------------------
# SplitMix64


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """SplitMix64 generator.

    The state after ``i`` steps is ``seed + i * gamma`` (mod 2**64), so blocks
    of outputs are computed in one vectorized pass.
    """

    def __init__(self, seed: int) -> None:
        if not 0 <= seed <= MASK64:
            raise InvalidParams(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.state = seed

    def next_word(self) -> int:
        return int(self.words(1)[0])

    def words(self, count: int) -> np.ndarray:
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix(states)
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return out

    def uniforms(self, count: int) -> np.ndarray:
        """Uniforms in [0, 1): the top 53 bits of each word over 2**53."""
        return (self.words(count) >> np.uint64(11)).astype(float) * 2.0**-53

    def gaussians(self, count: int) -> np.ndarray:
        """Standard normals, one per consecutive uniform pair (cosine branch)."""
        u = self.uniforms(2 * count)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# Synthetic coils


class AnomalyKind(str, Enum):
    SPIKE = "SPIKE"
    STUCK = "STUCK"
    SURFACE_BURST = "SURFACE_BURST"


@dataclass(frozen=True)
class Anomaly:
    kind: AnomalyKind
    channel: str
    start: int
    length: int = 1
    magnitude: float = 0.0
    col_start: int = 0
    col_count: int | None = None  # SURFACE_BURST only; None means to the edge

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AnomalyKind(self.kind))


@dataclass(frozen=True)
class ChannelParams:
    base: float
    amplitude: float
    period: float
    sigma: float


# Periodic, signal-dominated channels (amplitude = 5 sigma), the shape of
# roll-eccentricity patterns along a strip.
DEFAULT_CHANNELS: dict[str, ChannelParams] = {
    "p1": ChannelParams(base=0.25, amplitude=0.005, period=3100.0, sigma=0.001),
    "p2": ChannelParams(base=320.0, amplitude=10.0, period=2300.0, sigma=2.0),
    "p3": ChannelParams(base=1200.0, amplitude=25.0, period=4700.0, sigma=5.0),
    "p4": ChannelParams(base=0.6, amplitude=0.8, period=1700.0, sigma=0.16),
}


@dataclass(frozen=True)
class SynthParams:
    seed: int = 42
    n_samples: int = 10_000
    width: int = 64
    sample_step_m: float = 0.1
    coil_id: str = "SYN-0001"
    channels: Mapping[str, ChannelParams] = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    anomalies: tuple[Anomaly, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        problems = []
        if not 0 <= self.seed <= MASK64:
            problems.append("seed must be an unsigned 64-bit integer")
        if self.n_samples < 1 or self.width < 1:
            problems.append("n_samples and width must be >= 1")
        if not (math.isfinite(self.sample_step_m) and self.sample_step_m > 0):
            problems.append("sample_step_m must be positive")
        if set(self.channels) != {"p1", "p2", "p3", "p4"}:
            problems.append("channels must define exactly p1, p2, p3 and p4")
        for ch, cp in self.channels.items():
            if not all(math.isfinite(v) for v in (cp.base, cp.amplitude, cp.sigma)):
                problems.append(f"{ch}: parameters must be finite")
            if not (cp.period > 0 and cp.sigma >= 0):
                problems.append(f"{ch}: period must be positive and sigma non-negative")
        for a in self.anomalies:
            if not 0 <= a.start < self.n_samples or a.length < 1:
                problems.append(f"{a}: start outside [0, n_samples) or length < 1")
            if not math.isfinite(a.magnitude):
                problems.append(f"{a}: magnitude must be finite")
            if a.kind is AnomalyKind.SURFACE_BURST:
                if a.channel != "p4":
                    problems.append(f"{a}: SURFACE_BURST applies to p4 only")
                if not 0 <= a.col_start < self.width:
                    problems.append(f"{a}: col_start outside [0, width)")
            elif a.channel not in ("p1", "p2", "p3"):
                problems.append(f"{a}: {a.kind.value} applies to p1, p2 or p3")
        if problems:
            raise InvalidParams("; ".join(problems))


@dataclass(frozen=True)
class Label:
    index: int
    kind: AnomalyKind


def round_sig(values: np.ndarray, digits: int = SIG_DIGITS) -> np.ndarray:
    """Round to ``digits`` significant decimal digits (exactly, via text)."""
    flat = [float(f"{v:.{digits}g}") for v in np.asarray(values, dtype=float).ravel()]
    return np.array(flat).reshape(np.shape(values))


def synth_coil(params: SynthParams) -> tuple[CoilRecord, list[Label]]:
    """Generate a coil and the ground-truth labels of every injected sample.

    Gaussian draws are taken in a fixed order: p1, p2, p3 (N each), then the
    p4 map row by row. Values are rounded to 9 significant digits.
    """
    n, w = params.n_samples, params.width
    rng = SplitMix64(params.seed)
    j = np.arange(n, dtype=float)

    def signal(cp: ChannelParams, shape: tuple[int, ...]) -> np.ndarray:
        wave = cp.base + cp.amplitude * np.sin(2.0 * math.pi * j / cp.period)
        noise = rng.gaussians(int(np.prod(shape))).reshape(shape)
        wave = wave if len(shape) == 1 else wave[:, None]
        return wave + cp.sigma * noise

    data = {ch: signal(params.channels[ch], (n,)) for ch in ("p1", "p2", "p3")}
    p4 = signal(params.channels["p4"], (n, w))

    labels: set[tuple[int, AnomalyKind]] = set()
    for a in params.anomalies:
        sigma = params.channels[a.channel].sigma
        if a.kind is AnomalyKind.SPIKE:
            data[a.channel][a.start] += a.magnitude * sigma
            labels.add((a.start, a.kind))
        elif a.kind is AnomalyKind.STUCK:
            stop = min(n, a.start + a.length)
            data[a.channel][a.start : stop] = data[a.channel][a.start]
            labels.update((i, a.kind) for i in range(a.start, stop))
        else:
            stop = min(n, a.start + a.length)
            cstop = w if a.col_count is None else min(w, a.col_start + a.col_count)
            p4[a.start : stop, a.col_start : cstop] += a.magnitude * sigma
            labels.update((i, a.kind) for i in range(a.start, stop))

    coil = CoilRecord(
        coil_id=params.coil_id,
        sample_step_m=params.sample_step_m,
        positions_m=round_sig(j * params.sample_step_m),
        p1=round_sig(data["p1"]),
        p2=round_sig(data["p2"]),
        p3=round_sig(data["p3"]),
        p4=round_sig(p4),
    )
    kind_order = list(AnomalyKind)
    ordered = sorted(labels, key=lambda t: (t[0], kind_order.index(t[1])))
    return coil, [Label(i, k) for i, k in ordered]


def params_from_dict(doc: Mapping[str, Any]) -> SynthParams:
    try:
        doc = dict(doc)
        if "channels" in doc:
            merged = dict(DEFAULT_CHANNELS)
            merged.update({ch: ChannelParams(**cp) for ch, cp in doc["channels"].items()})
            doc["channels"] = merged
        doc["anomalies"] = tuple(Anomaly(**a) for a in doc.get("anomalies", ()))
        return SynthParams(**doc)
    except (TypeError, ValueError) as exc:
        raise InvalidParams(f"bad generator parameters: {exc}") from exc


# ---------------------------------------------------------------------------
# Features


def feature_matrix(coil: CoilRecord) -> np.ndarray:
    """(N, 4) matrix: p1, p2, p3 and the mean of each p4 row across the width."""
    return np.column_stack([coil.p1, coil.p2, coil.p3, coil.p4.mean(axis=1)])


# ---------------------------------------------------------------------------
# CSV


_HEADER_RE = re.compile(r"# coil_id=(\S+) sample_step_m=(\S+)")


def _num(v: float) -> str:
    return repr(float(v))


def _column_names(width: int) -> list[str]:
    return ["pos_m", "p1", "p2", "p3", *(f"p4_{i:04d}" for i in range(width))]


def write_coil_csv(coil: CoilRecord) -> bytes:
    lines = [
        f"# coil_id={coil.coil_id} sample_step_m={_num(coil.sample_step_m)}",
        ",".join(_column_names(coil.width)),
    ]
    cols = np.column_stack([coil.positions_m, coil.p1, coil.p2, coil.p3, coil.p4])
    lines.extend(",".join(map(_num, row)) for row in cols.tolist())
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_coil_csv(data: bytes) -> CoilRecord:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadHeader(f"coil file is not UTF-8: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if len(lines) < 2:
        raise BadHeader("coil file needs a comment line and a column header")
    m = _HEADER_RE.fullmatch(lines[0])
    if not m:
        raise BadHeader(f"line 1: expected '# coil_id=<id> sample_step_m=<decimal>', got {lines[0]!r}")
    coil_id = m.group(1)
    try:
        step = float(m.group(2))
    except ValueError as exc:
        raise BadHeader(f"line 1: bad sample_step_m {m.group(2)!r}") from exc
    names = lines[1].split(",")
    width = len(names) - 4
    if width < 1 or names != _column_names(width):
        raise BadHeader(f"line 2: unexpected column header {lines[1]!r}")

    ncols = 4 + width
    rows = np.empty((len(lines) - 2, ncols))
    for i, ln in enumerate(lines[2:]):
        fields = ln.split(",")
        if len(fields) != ncols:
            raise BadRow(i + 3, f"expected {ncols} fields, got {len(fields)}")
        try:
            rows[i] = [float(f) for f in fields]
        except ValueError as exc:
            raise BadRow(i + 3, str(exc)) from exc
    return validate_coil(
        {
            "coil_id": coil_id,
            "sample_step_m": step,
            "positions_m": rows[:, 0],
            "p1": rows[:, 1],
            "p2": rows[:, 2],
            "p3": rows[:, 3],
            "p4": rows[:, 4:],
        }
    )


def write_labels_csv(labels: Sequence[Label]) -> bytes:
    lines = ["index,kind", *(f"{lb.index},{lb.kind.value}" for lb in labels)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_labels_csv(data: bytes) -> list[Label]:
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0] != "index,kind":
        raise BadHeader("label file must start with 'index,kind'")
    out = []
    for n, ln in enumerate(lines[1:], start=2):
        try:
            idx, kind = ln.split(",")
            out.append(Label(int(idx), AnomalyKind(kind)))
        except ValueError as exc:
            raise BadRow(n, str(exc)) from exc
    return out
