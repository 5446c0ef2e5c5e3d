import numpy as np
import pytest
import torch

from conformal_sympow.numerics import RngStream

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
