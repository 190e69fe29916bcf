import numpy as np
import pytest
import torch

from tsbn.datasets import SynthParams, make_synthetic


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """Call with (criterion, passed, detail); lines are printed in the terminal summary."""
    def log(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        request.config._acceptance_lines.append(f"[{status}] criterion {criterion}: {detail}")
    return log


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    return make_synthetic(SynthParams(n_samples=24, seed=3))


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
