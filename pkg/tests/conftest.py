import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` lines for the terminal summary."""

    def record(criterion, passed, detail=""):
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        return passed

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status} {criterion}" + (f" ({detail})" if detail else ""))
