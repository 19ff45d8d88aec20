import numpy as np
import pytest

from ergomeasure.mapdsl import parse_map
from ergomeasure.noise import uniform_kernel, wrapped_gaussian_kernel


@pytest.fixture(scope="session")
def rotation():
    return parse_map("rotation:0.3")


@pytest.fixture(scope="session")
def doubling():
    return parse_map("doubling")


@pytest.fixture(scope="session")
def sine():
    return parse_map("sine2:0.1")


@pytest.fixture(scope="session")
def identity():
    return parse_map("x1 mod 1")


@pytest.fixture(scope="session")
def gauss01():
    return wrapped_gaussian_kernel(0.1)


@pytest.fixture
def uniform_noise():
    return uniform_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test under both kernel backends."""
    monkeypatch.setenv("ERGOMEASURE_DISABLE_NUMBA", "0" if request.param == "numba" else "1")
    return request.param


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line; the lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
