import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state2(rng, K=3, scale=5.0):
    from iekf_slam.states import SlamState2

    return SlamState2(rng.uniform(-3, 3), rng.uniform(-scale, scale, 2), rng.uniform(-scale, scale, (K, 2)))


def random_state3(rng, K=3, scale=5.0):
    from iekf_slam.liegroup import so3_exp
    from iekf_slam.states import SlamState3

    w = rng.standard_normal(3)
    w *= rng.uniform(0, 2.5) / np.linalg.norm(w)
    return SlamState3(so3_exp(w), rng.uniform(-scale, scale, 3), rng.uniform(-scale, scale, (K, 3)))


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
