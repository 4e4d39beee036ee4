import numpy as np
import pytest

from qgradflow.generate import random_problem

SX = np.array([[0, 1], [1, 0]], dtype=complex)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[2, 3])
def problem(request):
    return random_problem(request.param, seed=7 + request.param, T=3.0)


@pytest.fixture
def problem2():
    return random_problem(2, seed=3, T=3.0)


@pytest.fixture
def problem3():
    return random_problem(3, seed=4, T=3.0)


def random_hermitian(n, rng):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
