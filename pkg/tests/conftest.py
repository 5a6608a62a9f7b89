import numpy as np
import pytest

from svgdkit import GaussianMixture1D, gaussian_target, mixture_target


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def std_normal():
    return gaussian_target([0.0], [[1.0]])


@pytest.fixture(scope="session")
def bimodal_mixture():
    return mixture_target(GaussianMixture1D((1 / 3, 2 / 3), (-2.0, 2.0), (1.0, 1.0)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
