import math

import numpy as np
import pytest

from dwellflux.core import (
    FunctionAmplitude,
    GaussCutPacket,
    PolynomialAmplitude,
    Region,
    UnitSystem,
    load_config,
    make_gauss_cut_packet,
    position_derivative,
    position_wavefunction,
    region_overlap,
)
from dwellflux.numerics import QuadratureSpec, gauss_legendre_panels, integrate


def test_units_and_region_validation():
    assert UnitSystem().hbar == 1.0 and UnitSystem().mass == 1.0
    with pytest.raises(ValueError):
        UnitSystem(0.0, 1.0)
    with pytest.raises(ValueError):
        UnitSystem(1.0, -2.0)
    assert Region(1.0, 4.0).width == 3.0
    assert Region.of_width(3.0).width == 3.0
    with pytest.raises(ValueError):
        Region(2.0, 2.0)


def test_reference_packet_normalised(ref_packet):
    spec = QuadratureSpec(abs_tol=1e-15, rel_tol=1e-13, singular_points=(1.0, 2.0, 3.0))
    norm, _ = integrate(lambda k: np.abs(ref_packet(k)) ** 2, 0.0, ref_packet.k_max, spec)
    assert abs(norm - 1) < 1e-10
    assert abs(ref_packet.norm2() - 1) < 1e-10


@pytest.mark.parametrize("params", [(0.5, 2.0, 0.4), (0.1, 1.0, 0.1), (3.0, 0.7, 0.3), (0.5, 5.0, 1.2)])
def test_normalisation_and_support(params):
    psi = make_gauss_cut_packet(*params, x0=-30.0)
    assert abs(psi.norm2() - 1) < 1e-10
    assert psi(-1.0) == 0
    assert psi(0.0) == 0
    alpha, k0, dk = params
    outside = np.array([k0 + 12 * dk, k0 + 12.5 * dk, k0 + 20 * dk])
    assert np.all(np.abs(psi(outside)) < 1e-12)


def test_large_alpha_limit_is_plain_gaussian():
    psi = make_gauss_cut_packet(200.0, 2.0, 0.3)
    k = np.linspace(0.5, 3.5, 50)
    ratio = np.abs(psi(k)) / np.exp(-((k - 2.0) ** 2) / (4 * 0.3**2))
    assert np.ptp(ratio) / ratio.mean() < 1e-12


def test_phase_factor_from_start_position():
    a = make_gauss_cut_packet(0.5, 2.0, 0.4, 0.0)
    b = make_gauss_cut_packet(0.5, 2.0, 0.4, -7.0)
    k = np.linspace(0.3, 4.0, 20)
    np.testing.assert_allclose(b(k), a(k) * np.exp(7j * k), rtol=1e-13, atol=0)


@pytest.mark.parametrize("bad", [(0.0, 2.0, 0.4), (0.5, -1.0, 0.4), (0.5, 2.0, 0.0), (float("nan"), 2.0, 0.4)])
def test_packet_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        make_gauss_cut_packet(*bad)


def test_density_peaks_at_start_position():
    psi = make_gauss_cut_packet(0.5, 2.0, 0.4, -60.0)
    x = np.linspace(-120.0, 0.0, 2401)
    dens = np.abs(position_wavefunction(psi, x, 0.0)) ** 2
    assert abs(x[np.argmax(dens)] + 60.0) < 0.1
    # oracle: direct scipy quadrature of the k-integral at the peak and 3 widths out
    from scipy.integrate import quad

    for xv in (-60.0, -57.0):
        re = quad(lambda k: (psi(k) * np.exp(1j * k * xv)).real, 0, psi.k_max, limit=400)[0]
        im = quad(lambda k: (psi(k) * np.exp(1j * k * xv)).imag, 0, psi.k_max, limit=400)[0]
        direct = complex(re, im) / math.sqrt(2 * math.pi)
        assert abs(position_wavefunction(psi, xv, 0.0) - direct) < 1e-10


@pytest.mark.parametrize("t", [0.0, 50.0, 200.0])
def test_parseval(t):
    psi = make_gauss_cut_packet(0.5, 2.0, 0.4, -60.0)
    centre = -60.0 + 2.0 * t
    spread = 15.0 + 0.8 * t
    x, w = gauss_legendre_panels(centre - 4 * spread - 40, centre + 4 * spread + 40, 400, 16)
    total = np.sum(w * np.abs(position_wavefunction(psi, x, t)) ** 2)
    assert abs(total - 1) < 1e-6


def test_narrow_packet_moves_at_group_velocity():
    psi = make_gauss_cut_packet(0.5, 2.0, 0.02, 0.0)
    dt = 20.0
    x = np.linspace(-20.0, 70.0, 9001)
    p0 = x[np.argmax(np.abs(position_wavefunction(psi, x, 0.0)) ** 2)]
    p1 = x[np.argmax(np.abs(position_wavefunction(psi, x, dt)) ** 2)]
    assert abs((p1 - p0) - 2.0 * dt) < 0.02 * 2.0 * dt


def test_closed_form_waves_match_quadrature():
    psi = make_gauss_cut_packet(0.5, 2.0, 0.4, -30.0)
    poly = PolynomialAmplitude(psi, [0.2, -0.5j, 0.1])
    x = np.linspace(-50.0, 10.0, 31)
    for t in (0.0, 7.5):
        w, d = poly.wave_and_derivative(x, t)
        np.testing.assert_allclose(w, position_wavefunction(poly, x, t), atol=1e-11)
        np.testing.assert_allclose(d, position_derivative(poly, x, t), atol=1e-11)


def test_function_amplitude_and_inner_product():
    psi = make_gauss_cut_packet(0.5, 2.0, 0.4)
    f = FunctionAmplitude(lambda k: 2j * psi(k), psi.support, psi.centre)
    assert abs(f.inner(psi) - (-2j)) < 1e-10 or abs(f.inner(psi) - 2j) < 1e-10
    assert abs(f.norm2() - 4) < 1e-9


def test_region_overlap_small_for_upstream_packet(ref_packet, ref_region):
    assert region_overlap(ref_packet, ref_region) < 1e-8
    inside = make_gauss_cut_packet(0.5, 2.0, 0.4, 25.0)
    assert region_overlap(inside, ref_region) > 0.5


def test_load_config(tmp_path):
    cfg = {"alpha": 0.5, "k0": 2, "dk": 0.4, "x0": -400, "x1": 0, "x2": 50}
    p = tmp_path / "c.json"
    import json

    p.write_text(json.dumps(cfg))
    out = load_config(p)
    assert out["hbar"] == 1.0 and out["mass"] == 1.0 and out["k0"] == 2.0
    t = tmp_path / "c.toml"
    t.write_text("\n".join(f"{k} = {float(v)}" for k, v in cfg.items()))
    assert load_config(t)["x2"] == 50.0
    with pytest.raises(ValueError, match="missing"):
        load_config({"alpha": 1.0})
    with pytest.raises(ValueError, match="number"):
        load_config({**cfg, "dk": "wide"})


def test_packet_value_semantics():
    a = make_gauss_cut_packet(0.5, 2.0, 0.4, -1.0)
    b = make_gauss_cut_packet(0.5, 2.0, 0.4, -1.0)
    assert isinstance(a, GaussCutPacket)
    assert a == b and hash(a) == hash(b)
