import numpy as np
import pytest
from hypothesis import settings

from eulerci.fields import Grid3

settings.register_profile("eulerci", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("eulerci")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def grid16():
    return Grid3(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid3(32)


@pytest.fixture(scope="session")
def grid64():
    return Grid3(64)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(lines):
        for line in lines[key]:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Mapping criterion number -> printed PASS/FAIL lines (shown in the terminal summary)."""
    return request.config.acceptance_lines
