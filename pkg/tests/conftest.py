import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from manipaug import scenarios as sc

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def planar():
    return sc.PlanarScenario()


@pytest.fixture(scope="session")
def planar_env(planar):
    return planar.environment()


@pytest.fixture(scope="session")
def planar_data(planar):
    return planar.generate(6, np.random.default_rng(0))


@pytest.fixture(scope="session")
def rope():
    return sc.RopeScenario()


@pytest.fixture(scope="session")
def rope_env(rope):
    return rope.environment()


@pytest.fixture(scope="session")
def rope_data(rope, rope_env):
    return rope.generate(3, np.random.default_rng(0), env=rope_env)
