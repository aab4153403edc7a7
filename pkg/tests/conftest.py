import numpy as np
import pytest

from lateral_cauchy.config import config_from_dict
from lateral_cauchy.mesh import EllipticCoefficients, build_mesh, time_levels
from lateral_cauchy.weights import WeightConfig, default_psi

# filled by test_acceptance.py, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def line51():
    return build_mesh("interval", 51, "right")


@pytest.fixture
def weight_cfg(line51):
    return WeightConfig(1.0, 1.0, 1.0, default_psi(line51))


@pytest.fixture
def identity(line51):
    return EllipticCoefficients.identity(line51)


@pytest.fixture
def times100():
    return time_levels(1.0, 100)


@pytest.fixture
def zero_cfg():
    return config_from_dict({"kernels": {"preset": "zero"}})


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
