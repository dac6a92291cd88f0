import functools

import numpy as np
import pytest

from wannierlab.groups import make_group
from wannierlab.models import build_model, select_window, spectral_projection

GROUPS = {
    "Z1": lambda: make_group("Z1"),
    "Z2": lambda: make_group("Z2"),
    "Pg": lambda: make_group("Pg"),
    "InfDihedral": lambda: make_group("InfDihedral"),
    "HeisZ": lambda: make_group("HeisZ"),
    "TwistedZ2": lambda: make_group("TwistedZ2", theta="1/3"),
}


@functools.lru_cache(maxsize=None)
def group(name):
    return GROUPS[name]()


@functools.lru_cache(maxsize=None)
def model(name):
    return build_model(name)


@functools.lru_cache(maxsize=None)
def window(name):
    return select_window(model(name))


@functools.lru_cache(maxsize=None)
def projection(name, R=12, method="ed"):
    return spectral_projection(model(name), window(name), R, method=method, tol=None)


@pytest.fixture(params=sorted(GROUPS))
def any_group(request):
    return group(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
