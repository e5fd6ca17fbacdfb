from __future__ import annotations

from collections.abc import Mapping

import numpy as np
import pytest

from coilqa.model import DetectorScores, QualityRecord


def make_record(
    values: Mapping[str, list[float] | np.ndarray],
    pv: Mapping[str, list[float] | np.ndarray] | None = None,
    levels: list[float] | np.ndarray | None = None,
    positions: list[float] | np.ndarray | None = None,
    coil_id: str = "C-1",
) -> QualityRecord:
    """Hand-built quality record; PVs default to 1 and outlier levels to 0."""
    n = len(next(iter(values.values())))
    pv = pv or {ch: np.ones(n) for ch in values}
    pv_full = {ch: np.asarray(pv.get(ch, np.ones(n)), dtype=float) for ch in values}
    zeros = np.zeros(n)
    return QualityRecord(
        coil_id=coil_id,
        positions_m=np.arange(n) * 0.1 if positions is None else positions,
        values=values,
        pv=pv_full,
        combined_pv=np.vstack(list(pv_full.values())).min(axis=0),
        outlier_levels=zeros if levels is None else levels,
        detector_scores=DetectorScores(zeros, zeros, zeros, zeros),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------------------
# acceptance criteria report: one PASS/FAIL line per criterion


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config._criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, title = mark.args
    passed = call.excinfo is None
    results = item.config._criteria
    # a criterion passes only if every test carrying its marker passed
    prev = results.get(number, (title, True))
    results[number] = (title, prev[1] and passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")
