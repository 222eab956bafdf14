import numpy as np
import pytest
from hypothesis import settings

from nilspec.lie import builtin_algebra

settings.register_profile("nilspec", max_examples=40, deadline=None)
settings.load_profile("nilspec")

BUNDLED = ("h1", "free3", "quaternionic", "h1xh1", "random42")


@pytest.fixture(params=BUNDLED)
def bundled(request):
    return builtin_algebra(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda t: int(t.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
