import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from metaiot.config import load_config
from metaiot.discernibility import ConditionGrid

sys.path.insert(0, str(Path(__file__).parent))
from builders import make_unit  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    """The packaged default configuration."""
    return load_config()


@pytest.fixture(scope="session")
def paper_grid():
    """9x9 temperature/humidity grid: 5..45 degC by 20..60 %RH in steps of 5."""
    return ConditionGrid.regular([np.arange(5.0, 46.0, 5.0), np.arange(20.0, 61.0, 5.0)])


@pytest.fixture
def unit():
    return make_unit()


def pytest_terminal_summary(terminalreporter):
    from report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
