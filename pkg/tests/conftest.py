"""Shared, session-cached profiles (the expensive solves run once per test session)."""
import math
import time

import numpy as np
import pytest
from hypothesis import settings

from coagflux.grid import build_grid
from coagflux.kernels import constant_kernel, product_kernel
from coagflux.steady import CascadeSchedule, profile_picard, run_cascade
from coagflux.evolution import TruncationParams

# criterion number -> (status line); filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE = {}
TIMINGS = {}

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def picard_grid(cpd, x_min=1e-4, x_max=30.0):
    return build_grid(x_min, x_max, int(math.ceil(cpd * math.log10(x_max / x_min))))


def timed(name, fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    TIMINGS[name] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def picard24():
    return timed("picard24", profile_picard, constant_kernel(), picard_grid(24))


@pytest.fixture(scope="session")
def picard48():
    return timed("picard48", profile_picard, constant_kernel(), picard_grid(48))


def three_stage(spec):
    stages = [TruncationParams(e, 1e3, 1e2) for e in (1e-2, 1e-3, 1e-4)]
    return run_cascade(CascadeSchedule(spec, stages, 1e-8, cells_per_decade=24))


@pytest.fixture(scope="session")
def cascade_constant():
    return timed("cascade_constant", three_stage, constant_kernel())


@pytest.fixture(scope="session")
def cascade_product():
    return timed("cascade_product", three_stage, product_kernel(0.25, 0.25))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
