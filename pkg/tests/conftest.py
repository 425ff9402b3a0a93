import sys

import numpy as np
import pytest

from uavee import AircraftParams, LinkParams


@pytest.fixture
def ac():
    return AircraftParams(c1=9.26e-4, c2=2250.0)


@pytest.fixture
def link():
    return LinkParams.from_triplet(B=1e6, beta0=1e-5, P_tx=0.01, sigma2=1e-14, H=100.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
