import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rampc.config import build_sets, load_bundled, synthesize_for
from rampc.geometry import Hyperbox
from rampc.model import QuadrotorParams, build_model, wind_disturbance_box

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

THETA0 = (1 / 0.037, 1 / 0.027)
THETA_STAR = 1 / 0.028


@pytest.fixture(scope="session")
def altitude_model():
    return build_model("altitude-2", QuadrotorParams(), THETA0)


@pytest.fixture(scope="session")
def direct_model():
    return build_model("direct-12", QuadrotorParams(), THETA0)


@pytest.fixture(scope="session")
def altitude_setup():
    cfg = load_bundled("altitude_mass")
    model, W, M = build_sets(cfg)
    return cfg, model, W, synthesize_for(cfg, model, W)


@pytest.fixture(scope="session")
def direct_setup():
    cfg = load_bundled("direct_mass")
    model, W, M = build_sets(cfg)
    return cfg, model, W, synthesize_for(cfg, model, W)


@pytest.fixture(scope="session")
def theta0_box():
    return Hyperbox([THETA0[0]], [THETA0[1]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
