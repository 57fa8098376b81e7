import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kslab.grid import Domain, build_grid

settings.register_profile("kslab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kslab")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SHAPE_GRIDS = {
    "interval": lambda n: build_grid(Domain.interval(1.0), n),
    "rectangle": lambda n: build_grid(Domain.rectangle(2.0, 1.0), (n, n // 2 + 2)),
    "radial_disc": lambda n: build_grid(Domain.disc(1.0), n),
}


@pytest.fixture(params=sorted(SHAPE_GRIDS))
def any_grid(request):
    return SHAPE_GRIDS[request.param](16)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
