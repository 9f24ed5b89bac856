import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nagmcmc import build_constellation, sample_rayleigh

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(params=[4, 16, 64], ids=lambda m: f"{m}qam")
def constellation(request):
    return build_constellation(request.param)


@pytest.fixture
def qam16():
    return build_constellation(16)


@pytest.fixture
def qam4():
    return build_constellation(4)


def random_hpd(rng, n, ridge=0.1):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return B.conj().T @ B + ridge * np.eye(n)


def random_channel(rng, n_rx=8, n_tx=8):
    return sample_rayleigh(n_rx, n_tx, rng)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
