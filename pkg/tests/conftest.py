import numpy as np
import pytest

from vkdelay.discretization import Grid

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'} {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid15():
    return Grid.square(15)


@pytest.fixture
def grid31():
    return Grid.square(31)
