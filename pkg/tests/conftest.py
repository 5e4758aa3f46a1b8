import os
import time

import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def tmp_jsonl(tmp_path):
    def write(lines):
        p = tmp_path / "corpus.jsonl"
        p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return p

    return write


_ACCEPTANCE = pytest.StashKey[list]()
_STARTED = pytest.StashKey[float]()


def pytest_sessionstart(session):
    session.config.stash[_STARTED] = time.perf_counter()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
        elapsed = time.perf_counter() - config.stash[_STARTED]
        terminalreporter.write_line(f"suite wall time {elapsed:.0f}s (criterion 8 budget 1800s)")
