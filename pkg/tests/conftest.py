import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nms_dia_osd.codes import bundled_code, random_code
from nms_dia_osd.gf2 import ParityCheckCode

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ccsds():
    return bundled_code("ccsds_128_64")


@pytest.fixture(scope="session")
def peg64():
    return bundled_code("peg_64_32")


@pytest.fixture(scope="session")
def tiny16():
    return bundled_code("tiny16")


@pytest.fixture(scope="session")
def hamming74():
    h = np.array([[1, 1, 0, 1, 1, 0, 0],
                  [1, 0, 1, 1, 0, 1, 0],
                  [0, 1, 1, 1, 0, 0, 1]], dtype=np.uint8)
    return ParityCheckCode(h, "hamming74")


def small_random_code(seed, n=12, m=6):
    return random_code(n, m, np.random.default_rng(seed))
