import numpy as np
import pytest

from helpers import RESULTS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} {detail}")
