import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gkpqudit import gkp
from gkpqudit.errors import TruncationWarning

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        yield


@pytest.fixture(scope="session")
def codes():
    """Finite-energy codes at Delta = 0.3 with default truncation, built lazily."""
    cache = {}

    def get(d, delta=0.3, n=None, **kw):
        key = (d, delta, n, tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = gkp.build_code(d, delta, n, **kw)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def ideal():
    cache = {}

    def get(d):
        if d not in cache:
            cache[d] = gkp.ideal_code(d)
        return cache[d]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def steady(codes):
    """Noiseless sBs steady state after 300 rounds at Delta = 0.3, per d."""
    from gkpqudit import simulate

    cache = {}

    def get(d):
        if d not in cache:
            plan = simulate.SimulationPlan(codes(d), error_switches={s: False for s in simulate.ERROR_SWITCHES})
            cache[d] = simulate.steady_state_rho(plan, 300)
        return cache[d]

    return get


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> (passed, detail), printed at the end of the run."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
