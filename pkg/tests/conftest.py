import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unfolded_doa.array_signal import build_dictionary, make_sla, make_ula  # noqa: E402


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ula16():
    return build_dictionary(make_ula(16), 64)


@pytest.fixture(scope="session")
def small_dic():
    return build_dictionary(make_ula(8), 16)


@pytest.fixture(scope="session")
def sla16():
    return build_dictionary(make_sla(16, 40, seed=3), 64)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
