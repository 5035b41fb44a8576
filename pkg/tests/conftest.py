import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def quiet():
    """Silence the coarse-grid resolution warning inside a test."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture
def unit_grid():
    from metransport import Grid

    return Grid(0.0, 1.0, 128)


def l2(v, h):
    return float(np.sqrt(np.sum(np.asarray(v) ** 2) * h))


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Print and record one PASS/FAIL line, then assert on it."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0][1:])):
            terminalreporter.write_line(line)
