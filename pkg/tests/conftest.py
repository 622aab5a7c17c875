import sys

import numpy as np
import pytest
from hypothesis import settings

from vsltrack import FluxParams, SolverConfig, TrackingProblem
from vsltrack.model import abs_sin_fn, constant_fn, sin_capped_fn

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return FluxParams()


@pytest.fixture(scope="session")
def test1(params):
    return TrackingProblem.from_functions(params, SolverConfig(), sin_capped_fn(), constant_fn(0.3))


@pytest.fixture(scope="session")
def test2(params):
    return TrackingProblem.from_functions(params, SolverConfig(), sin_capped_fn(), abs_sin_fn())


@pytest.fixture(scope="session")
def steady(params):
    """In = f* = 0.3 with rho0 = 0.4: v = 0.75 tracks exactly."""
    return TrackingProblem.from_functions(params, SolverConfig(initial_density=0.4),
                                          constant_fn(0.3), constant_fn(0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
