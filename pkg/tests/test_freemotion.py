import math

import numpy as np
import pytest

from dwellflux.core import Region, make_gauss_cut_packet
from dwellflux.freemotion import (
    OnShellDwell,
    branch_slope,
    branch_time,
    dwell_distribution,
    dwell_distribution_moments,
    dwell_eigenvalues,
    effective_window,
    find_branch_roots,
    heuristic_distribution,
    heuristic_distribution_moments,
    moment_grid,
    onshell_moments,
    onshell_power,
    pm_third_moment,
    wavepacket_dwell_moments,
    wavepacket_squared_mean,
)
from dwellflux.numerics import QuadratureSpec, derivative, integrate

L3 = Region.of_width(3.0)


def test_degenerate_eigenvalues():
    tm, tp = dwell_eigenvalues(math.pi / 3, L3)
    assert abs(tp - 9 / math.pi) < 1e-13 and abs(tm - 9 / math.pi) < 1e-13
    assert onshell_moments(math.pi / 3, L3).degenerate


def test_eigenvalues_example():
    tm, tp = dwell_eigenvalues(math.pi / 6, L3)
    assert abs(tp - 18 / math.pi * (1 + 2 / math.pi)) < 1e-12
    assert abs(tm - 18 / math.pi * (1 - 2 / math.pi)) < 1e-12
    assert abs(tp - 9.377) < 1e-3 and abs(tm - 2.082) < 1e-3


def test_eigenvalues_large_k():
    for k in (10.0, 100.0, 1000.0):
        tm, tp = dwell_eigenvalues(k, L3)
        assert abs(tp - tm) <= 2 / (k * k) * (1 + 1e-12)
        assert tm >= 0


def test_rejects_nonpositive_k():
    for f in (dwell_eigenvalues, onshell_moments, pm_third_moment):
        with pytest.raises(ValueError):
            f(0.0, L3)
    with pytest.raises(ValueError):
        onshell_power(1.0, 4, L3)


def test_onshell_moment_examples():
    m = onshell_moments(1.0, L3)
    assert m.m1 == pytest.approx(3.0, rel=1e-15)
    assert m.m2 == pytest.approx(9 + math.sin(3.0) ** 2, rel=1e-14)
    assert abs(m.m2 - 9.0199) < 1e-4
    z = onshell_moments(2 * math.pi / 3, L3)
    assert z.m2 == pytest.approx(z.m1**2, rel=1e-14)


def test_power_sums_on_random_cases():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        k = float(np.exp(rng.uniform(-3, 3)))
        region = Region.of_width(float(np.exp(rng.uniform(-2, 4))))
        tm, tp = dwell_eigenvalues(k, region)
        for n in (1, 2, 3):
            assert math.isclose(onshell_power(k, n, region), 0.5 * (tp**n + tm**n), rel_tol=1e-12)
        m1, m2 = onshell_power(k, 1, region), onshell_power(k, 2, region)
        excess = (m1 * math.sin(k * region.width) / (k * region.width)) ** 2
        assert math.isclose(m2 - m1 * m1, excess, rel_tol=1e-9, abs_tol=1e-12 * m2)


def test_onshell_dwell_asserts_invariants():
    with pytest.raises(AssertionError):
        OnShellDwell(k=1.0, t_plus=2.0, t_minus=1.0, m1=1.5, m2=2.0, m3=4.5)


def test_pm_third_examples():
    assert abs(pm_third_moment(1.0, L3) - 8.341) < 1e-3
    assert abs(onshell_power(1.0, 3, L3) - 27.18) < 1e-2
    ratio = pm_third_moment(20.0, L3) / onshell_power(20.0, 3, L3)
    assert abs(ratio - 1) < 0.01
    assert abs(pm_third_moment(1e4, L3) / onshell_power(1e4, 3, L3) - 1) < 1e-6


@pytest.mark.parametrize("L", [0.5, 1.0, 3.0, 10.0, 50.0])
def test_pm_third_below_third_moment(L):
    region = Region.of_width(L)
    k = np.linspace(1e-3, math.pi - 1e-3, 20001) / L
    assert np.all(pm_third_moment(k, region) < onshell_power(k, 3, region))


def test_branch_slope_matches_derivative():
    for br in ("plus", "minus"):
        for k in (0.4, 1.3, 2.9):
            fd = derivative(lambda q: float(branch_time(q, br, L3)), k, 1e-3)
            assert abs(branch_slope(k, br, L3) - fd) < 1e-8 * max(1, abs(fd))


def test_roots_empty_for_large_tau():
    assert find_branch_roots(1e6, Region.of_width(50.0), k_window=(1.0, 3.0)) == []


def test_degenerate_point_root():
    kstar = 2 * math.pi / 3
    roots = find_branch_roots(3 / kstar, L3, k_window=(1.5, 2.5))
    hits = {r.branch for r in roots if abs(r.k_root - kstar) < 1e-9}
    assert hits == {"plus", "minus"}


def test_roots_match_scan_oracle():
    region = Region.of_width(50.0)
    tau = 25.0
    roots = find_branch_roots(tau, region, k_window=(1.0, 3.0))
    grid = np.linspace(1.0, 3.0, 200_001)
    for br in ("plus", "minus"):
        got = np.array(sorted(r.k_root for r in roots if r.branch == br and not r.tangent))
        v = branch_time(grid, br, region) - tau
        idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
        ref = 0.5 * (grid[idx] + grid[idx + 1])
        assert got.size == ref.size
        assert np.max(np.abs(got - ref)) < 1e-5
        for r in roots:
            if r.branch == br:
                assert abs(branch_time(r.k_root, br, region) - tau) < 1e-12 * tau
    ks = [r.k_root for r in roots]
    assert ks == sorted(ks)


def test_scan_resolution_guard():
    with pytest.raises(ValueError):
        find_branch_roots(25.0, Region.of_width(50.0), k_window=(0.1, 7.0), scan_points=64)


def test_distribution_small_tau_and_validation(ref_packet, ref_region):
    assert dwell_distribution(ref_packet, ref_region, tau=0.5) == 0.0
    with pytest.raises(ValueError):
        dwell_distribution(ref_packet, ref_region, tau=0.0)
    assert dwell_distribution(ref_packet, ref_region, tau=24.0) > 0


def test_distribution_moments(ref_packet, ref_region):
    vals, errs = dwell_distribution_moments(ref_packet, ref_region)
    assert abs(vals[0] - 1) < 1e-3
    t1 = wavepacket_dwell_moments(ref_packet, ref_region, n=1)
    t2 = wavepacket_dwell_moments(ref_packet, ref_region, n=2)
    assert abs(vals[1] / t1 - 1) < 1e-3
    assert abs(vals[2] / t2 - 1) < 1e-2
    assert np.all(np.asarray(errs) >= 0)


def test_distribution_pointwise_against_quadrature_moment(ref_packet, ref_region):
    # integrate Pi on a stretch directly and compare with the piecewise route
    f = lambda t: np.array([dwell_distribution(ref_packet, ref_region, tau=v) for v in np.atleast_1d(t)])  # noqa: E731
    v, _ = integrate(f, 30.0, 31.0, QuadratureSpec(abs_tol=1e-7, rel_tol=1e-5, max_subdivisions=400))
    assert 0 < v < 0.1


def test_heuristic_distribution(ref_packet, ref_region):
    vals, _ = heuristic_distribution_moments(ref_packet, ref_region)
    t1 = wavepacket_dwell_moments(ref_packet, ref_region, n=1)
    assert abs(vals[0] - 1) < 1e-8
    assert abs(vals[1] - t1) < 1e-6 * t1
    assert abs(vals[2] - wavepacket_squared_mean(ref_packet, ref_region)) < 1e-6 * vals[2]
    with pytest.raises(ValueError):
        heuristic_distribution(ref_packet, ref_region, tau=-1.0)


def test_heuristic_peak_for_narrow_packet():
    psi = make_gauss_cut_packet(0.5, 2.0, 0.02)
    region = Region.of_width(50.0)
    tau = np.linspace(20.0, 30.0, 20001)
    peak = tau[np.argmax(heuristic_distribution(psi, region, tau=tau))]
    assert abs(peak - 25.0) < 0.05


def test_quantum_excess(ref_packet, ref_region):
    pi_vals, _ = heuristic_distribution_moments(ref_packet, ref_region)
    Pi_vals, _ = dwell_distribution_moments(ref_packet, ref_region)
    assert pi_vals[2] < Pi_vals[2]


def test_wavepacket_moments():
    narrow = make_gauss_cut_packet(0.5, 2.0, 0.005)
    region = Region.of_width(50.0)
    assert abs(wavepacket_dwell_moments(narrow, region, n=1) - 25.0) < 0.01 * 25
    psi = make_gauss_cut_packet(0.5, 1.0, 0.3)
    m1 = wavepacket_dwell_moments(psi, region, n=1)
    assert wavepacket_dwell_moments(psi, region, n=2) >= m1 * m1
    with pytest.raises(ValueError):
        wavepacket_dwell_moments(psi, region, n=4)


def test_effective_window(ref_packet):
    lo, hi = effective_window(ref_packet)
    assert 0 < lo < 0.1 and hi == pytest.approx(ref_packet.k_max)
    assert ref_packet.probability_below(lo) < 1e-14


def test_moment_grid_columns():
    g = moment_grid(np.array([1.0, math.pi / 3, 2.0]), L3)
    assert set(g) == {"k", "T_kk", "T2_kk", "T3_kk", "pm_third", "Tkk_squared", "degenerate"}
    assert list(g["degenerate"]) == [False, True, False]
    assert np.all(g["T2_kk"] >= g["Tkk_squared"])
