import numpy as np
import pytest

from kkpdelay.params import validate

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def perturbed_raw(**over):
    raw = {
        "alpha": 0.5, "beta": -1.0, "length": 1.0, "delay": 1.5, "mode": "perturbed", "xi": 2.3,
        "omega": "0.25,0.75,0.25,0.75", "b.kind": "indicator", "b.value": 1.0, "nonlinear": False,
    }
    raw.update(over)
    return raw


def mu_raw(**over):
    raw = {
        "alpha": 0.5, "beta": -1.0, "length": 1.0, "delay": 1.0, "mode": "mu", "mu1": 2.0, "mu2": 1.0,
        "xi": 1.6, "omega": "0.25,0.75,0.25,0.75", "a.kind": "indicator", "a.value": 1.0, "nonlinear": False,
    }
    raw.update(over)
    return raw


@pytest.fixture
def perturbed_params():
    return validate(perturbed_raw())


@pytest.fixture
def mu_params():
    return validate(mu_raw())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
