import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number} [{status}] {name}" + (f": {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """Default pipeline on the 200-image seed-7 synthetic set, run once."""
    import time

    from fpclu.cli import main

    out = tmp_path_factory.mktemp("pipeline")
    t0 = time.perf_counter()
    code = main(["pipeline", "--out-dir", str(out), "--count-per-class", "40", "--rng-seed", "7", "--compare-measures"])
    elapsed = time.perf_counter() - t0
    return {"dir": out, "code": code, "seconds": elapsed}


@pytest.fixture(scope="session")
def seed7_metabase(pipeline_run):
    from fpclu.metabase import load_metabase

    return load_metabase(pipeline_run["dir"] / "metabase.csv")
