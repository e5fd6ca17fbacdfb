"""Coil quality supervision.

Per-sample plausibility values, a four-detector outlier ensemble fused by a
fuzzy inference system, order allocation, intimacy-filtered certificates and
a small framed TCP exchange between supplier and customer peers.
"""

from coilqa.errors import CoilQAError, InputError, ProtocolError, ValidationError
from coilqa.fucod import FucodConfig, FucodResult, fucod_run
from coilqa.ingest import SynthParams, synth_coil
from coilqa.model import CoilRecord, QualityRecord, validate_coil
from coilqa.qas import allocate, build_certificate, build_feedback
from coilqa.qgs import RunConfig, run_qgs

__version__ = "0.1.0"

__all__ = [
    "CoilQAError",
    "CoilRecord",
    "FucodConfig",
    "FucodResult",
    "InputError",
    "ProtocolError",
    "QualityRecord",
    "RunConfig",
    "SynthParams",
    "ValidationError",
    "allocate",
    "build_certificate",
    "build_feedback",
    "fucod_run",
    "run_qgs",
    "synth_coil",
    "validate_coil",
]
