import time

import pytest

from dwellflux import ffcf
from dwellflux.core import Region, UnitSystem, make_gauss_cut_packet

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def units():
    return UnitSystem()


@pytest.fixture(scope="session")
def ref_packet():
    """Cut Gaussian with alpha=0.5, k0=2, dk=0.4, started well upstream of [0, 50]."""
    return make_gauss_cut_packet(0.5, 2.0, 0.4, -400.0)


@pytest.fixture(scope="session")
def ref_region():
    return Region(0.0, 50.0)


def transit_packet(dk: float, alpha: float = 0.5, k0: float = 2.0):
    """Packet for the approximation study: nearest start that keeps it clear of x1 = 0."""
    return make_gauss_cut_packet(alpha, k0, dk, -(10.0 / dk + 20.0))


@pytest.fixture(scope="session")
def c_moments(ref_packet, ref_region):
    """Lazily computed correlation moments of the reference packet, shared across modules."""
    cache = {}

    def get(order):
        if order not in cache:
            start = time.perf_counter()
            cache[order] = ffcf.correlation_moment(ref_packet, ref_region, order=order)
            get.seconds[order] = time.perf_counter() - start
        return cache[order]

    get.seconds = {}
    return get


@pytest.fixture(scope="session")
def ref_hump(ref_packet, ref_region):
    return ffcf.hump_area(ref_packet, ref_region)


@pytest.fixture(scope="session")
def approx_reports():
    cache = {}

    def get(dk, L=100.0, order=4):
        key = (dk, L, order)
        if key not in cache:
            cache[key] = ffcf.approximation_moments(transit_packet(dk), Region(0.0, L), order=order)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


