import sys

import numpy as np
import pytest

from secureboost._random import RandomSource
from secureboost.paillier import keygen


@pytest.fixture(scope="session")
def keys256():
    return keygen(256, RandomSource("tests-256"))


@pytest.fixture(scope="session")
def keys512():
    return keygen(512, RandomSource("tests-512"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = next((mod for name, mod in sys.modules.items() if name.endswith("test_acceptance")),
                  None)
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
