import numpy as np
import pytest

from qhex.hemihex import decompose
from qhex.scheme import build_nested


@pytest.fixture(scope="session")
def nested():
    return build_nested(21, 61, 4000, seed=7)


@pytest.fixture(scope="session")
def nbhds(nested):
    return decompose(nested)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
