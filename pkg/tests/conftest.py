import numpy as np
import pytest

from nanotrap.trap_potential import DepthCalibration, build_potential, find_trap_sites

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ref_field():
    return build_potential()


@pytest.fixture(scope="session")
def ref_sites(ref_field):
    return find_trap_sites(ref_field)


@pytest.fixture(scope="session")
def ref_site(ref_sites):
    return ref_sites[0]


@pytest.fixture(scope="session")
def calibration(ref_field, ref_site):
    return DepthCalibration(ref_field, ref_site)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
