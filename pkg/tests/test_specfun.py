import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwellflux.core import UnitSystem
from dwellflux.specfun import (
    OVERFLOW_GUARD,
    SWITCH_IMAG,
    erfi,
    erfi_continued_fraction,
    erfi_series,
    f_kernel,
    f_kernel_partials,
)

mpmath.mp.dps = 40


def _ref(z):
    return complex(mpmath.erfi(mpmath.mpc(z.real, z.imag)))


def test_simple_values():
    assert erfi(0) == 0
    assert abs(erfi(1.0) - 1.6504257587975428) < 1e-15 * 1.65
    assert abs(erfi(1j) - 1j * math.erf(1.0)) < 1e-15


def test_erfi_one_against_quadrature():
    val = float(2 / mpmath.sqrt(mpmath.pi) * mpmath.quad(lambda t: mpmath.exp(t * t), [0, 1]))
    assert abs(erfi(1.0) - val) < 1e-15 * val


def test_accuracy_against_mpmath():
    rng = np.random.default_rng(7)
    r = 8 * np.sqrt(rng.random(600))
    th = rng.uniform(-math.pi, math.pi, 600)
    z = r * np.exp(1j * th)
    z = z[(z * z).real < OVERFLOW_GUARD]
    got = erfi(z)
    worst = max(abs(g - _ref(v)) / abs(_ref(v)) for g, v in zip(got, z))
    assert worst < 1e-12


def test_symmetries_on_random_sample():
    rng = np.random.default_rng(11)
    r = 5 * np.sqrt(rng.random(1000))
    z = r * np.exp(1j * rng.uniform(-math.pi, math.pi, 1000))
    v = erfi(z)
    scale = np.maximum(np.abs(v), 1e-300)
    assert np.max(np.abs(erfi(-z) + v) / scale) <= 1e-13
    assert np.max(np.abs(erfi(np.conj(z)) - np.conj(v)) / scale) <= 1e-13


def test_regimes_agree_in_overlap_band():
    x = np.linspace(0.0, 8.0, 81)
    y = np.linspace(SWITCH_IMAG, SWITCH_IMAG + 1.0, 11)
    z = (x[:, None] + 1j * y[None, :]).ravel()
    a = erfi_series(z)
    b = erfi_continued_fraction(z)
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-10


def test_overflow_and_nonfinite_raise():
    with pytest.raises(OverflowError):
        erfi(27.0)
    with pytest.raises(ValueError):
        erfi(complex("nan"))
    assert np.isfinite(erfi(26.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(-6, 6), st.floats(-6, 6))
def test_oddness_property(x, y):
    z = complex(x, y)
    v = erfi(z)
    assert abs(erfi(-z) + v) <= 1e-13 * max(abs(v), 1e-300)


def test_f_kernel_special_values():
    units = UnitSystem()
    for tau in (0.5, 1.0, 4.0):
        expected = -2 * np.sqrt(1j * math.pi * tau / 2)
        assert abs(f_kernel(0.0, tau) - expected) < 1e-14
        c = np.sqrt(1j / (2 * tau))
        for x in (0.7, 3.0, 11.0):
            # erfi is odd, so x erfi(c x) and with it f are even in x
            assert abs(erfi(-c * x) + erfi(c * x)) <= 1e-13 * abs(erfi(c * x))
            assert abs(f_kernel(-x, tau) - f_kernel(x, tau)) <= 1e-13 * abs(f_kernel(x, tau))
            gauss = -2 * np.exp(1j * x * x / (2 * tau)) * np.sqrt(1j * math.pi * tau / 2)
            assert abs(f_kernel(x, tau) - gauss - 1j * math.pi * x * erfi(c * x)) < 1e-12 * abs(gauss)
    with pytest.raises(ValueError):
        f_kernel(1.0, 0.0, units)


def test_f_kernel_against_integral_oracle():
    # f(x) = f(0) + i pi int_0^x erfi(c s) ds, with erfi(z) = (2/sqrt(pi)) z int_0^1 e^{z^2 u^2} du
    x, tau = 3.0, 1.0
    c = mpmath.sqrt(1j / (2 * tau))

    def erfi_quad(z):
        return 2 / mpmath.sqrt(mpmath.pi) * z * mpmath.quad(lambda u: mpmath.exp(z * z * u * u), [0, 1])

    integral = mpmath.quad(lambda s: erfi_quad(c * s), [0, 1, 2, 3])
    f0 = -2 * mpmath.sqrt(1j * mpmath.pi * tau / 2)
    ref = complex(f0 + 1j * mpmath.pi * integral)
    assert abs(f_kernel(x, tau) - ref) < 1e-8 * abs(ref)


def test_partials_match_finite_differences():
    from dwellflux.numerics import derivative

    for x, tau in [(0.3, 0.8), (3.0, 1.0), (-5.0, 2.5), (12.0, 6.0)]:
        p = f_kernel_partials(x, tau)
        fxx = derivative(lambda s: derivative(lambda y: f_kernel(y, tau), s, 1e-2), x, 1e-2)
        ftt = derivative(lambda t: f_kernel(x, t), tau, 0.02 * tau, order=2)
        fxt = derivative(lambda t: derivative(lambda y: f_kernel(y, t), x, 1e-2), tau, 0.02 * tau)
        for a, b in ((p.f_xx, fxx), (p.f_tautau, ftt), (p.f_xtau, fxt)):
            assert abs(a - b) <= 1e-7 * max(1.0, abs(a))


def test_partials_accept_complex_tau():
    tau = 2.0 * np.exp(0.3j)
    p = f_kernel_partials(1.5, tau)
    assert all(np.isfinite(v) for v in p)
    with pytest.raises(ValueError):
        f_kernel_partials(1.0, -1.0 + 0.5j)
