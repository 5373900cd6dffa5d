import numpy as np
import pytest

from rps_spde.cocycle import make_params
from rps_spde.noise import noise_from_rule
from rps_spde.spectral import DomainSpec, build_basis


@pytest.fixture(scope="session")
def flagship_params():
    basis = build_basis(DomainSpec(n_x=64, c=15.0), 8)
    return make_params(basis, noise_from_rule("0.25/k", 8), N_trunc=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def report(capsys):
    """Record one pass/fail line per acceptance criterion."""
    def _report(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
