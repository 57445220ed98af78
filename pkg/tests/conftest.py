import numpy as np
import pytest

from feedopt.harness import build_paper_instance
from feedopt.plant import LinearPlant


def static_plant(H, offset=None):
    """Plant with A = 0, C = I so that y_ss = H u + offset."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    q, p = H.shape
    offset = np.zeros(q) if offset is None else np.asarray(offset, dtype=float)
    return LinearPlant(np.zeros((q, q)), H, np.eye(q), np.eye(q), np.zeros((q, q)), offset)


@pytest.fixture(scope="session")
def bench():
    """Seeded 20/10/5/5 instance shared by the slower tests."""
    return build_paper_instance(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion; lines are echoed in the summary."""

    def _report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
