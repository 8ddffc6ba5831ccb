import numpy as np
import pytest
import torch

torch.set_default_dtype(torch.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    from lrdstereo import _accel

    if request.param == "numba" and _accel.numba is None:
        pytest.skip("numba not installed")
    with _accel.use_backend(request.param):
        yield request.param


ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
