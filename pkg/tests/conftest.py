import numpy as np
import pytest

from pslsim.data import SyntheticSpec, make_gaussian_mixture

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Register a one-line acceptance verdict, printed in the terminal summary."""

    def _record(name, passed, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mixture():
    return make_gaussian_mixture(SyntheticSpec())


@pytest.fixture(scope="session")
def small_mixture():
    return make_gaussian_mixture(SyntheticSpec(classes=5, per_class_count=200, feature_dim=4,
                                               test_per_class=40))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
