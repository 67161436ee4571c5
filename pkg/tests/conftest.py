import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

TS_FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures", "ts")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ts_dir():
    return TS_FIXTURES


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome; the summary prints them in order."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
