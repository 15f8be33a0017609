import numpy as np
import pytest

from copulavi.sampling import RngState

# criterion number -> (title, passed, detail), filled by the acceptance suite
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})")


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


@pytest.fixture
def record(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    def _record(n, title, passed, detail):
        ACCEPTANCE[n] = (title, bool(passed), detail)
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})")
    return _record
