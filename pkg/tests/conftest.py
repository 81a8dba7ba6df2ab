import numpy as np
import pytest

from aeroemu import refmodel
from aeroemu.transforms import fit_stats


@pytest.fixture(scope="session")
def small_ds():
    return refmodel.generate_dataset(2000, 3)


@pytest.fixture(scope="session")
def small_stats(small_ds):
    return fit_stats(small_ds)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(LINES, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(LINES[key])
