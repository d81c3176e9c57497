import numpy as np
import pytest

from phreg import DescriptorSystem, PHRealization


def two_by_two():
    """E = diag(1, 0), A = J2, B = C^T = e2, Q = I: index 2 open loop."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    sys = DescriptorSystem(np.diag([1.0, 0.0]), J, B, B.T)
    real = PHRealization(J, np.zeros((2, 2)), np.eye(2), B, np.zeros((2, 1)))
    return sys, real


def skew_pair():
    """E = 0, A = J2, B = C = I, Q = I: the skew-core case."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    sys = DescriptorSystem(np.zeros((2, 2)), J, np.eye(2), np.eye(2))
    real = PHRealization(J, np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 2)))
    return sys, real


@pytest.fixture
def worked():
    return two_by_two()


@pytest.fixture
def skew():
    return skew_pair()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
