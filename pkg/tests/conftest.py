import numpy as np
import pytest

from qsrnet.network import Certificate, build_uav_network, certify
from qsrnet.riccati import QuadrotorParams, randomize_fleet

UAV_SEED = 0


@pytest.fixture(scope="session")
def uav_fleet():
    return build_uav_network(randomize_fleet(QuadrotorParams(), 9, UAV_SEED))


@pytest.fixture(scope="session")
def uav_certificate(uav_fleet):
    cert = certify(uav_fleet.network)
    assert isinstance(cert, Certificate), cert
    return cert


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            verdict = "PASS"
        else:
            verdict = "FAIL"
            self.detail = (self.detail + "; " if self.detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        self.store[self.number] = f"criterion {self.number} [{verdict}] {self.title}: {self.detail}"
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one pass/fail line per acceptance criterion."""
    store = request.config.stash.setdefault(_CRITERIA, {})
    return lambda number, title: _Criterion(store, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, None)
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(store):
        terminalreporter.write_line(store[n])
