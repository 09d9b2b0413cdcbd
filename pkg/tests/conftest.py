import numpy as np
import pytest


@pytest.fixture
def worked():
    """The n=4, d=1 example: rows 3-4 of P are [0, 1, 0, 1], rows 1-2 zero."""
    Q = np.array([[0.0], [0.0], [1.0], [1.0]])
    K = np.array([[0.0], [1.0], [0.0], [1.0]])
    V = np.array([[1.0], [2.0], [3.0], [4.0]])
    return Q, K, V


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(test_acceptance.RESULTS):
        terminalreporter.write_line(test_acceptance.RESULTS[num])
