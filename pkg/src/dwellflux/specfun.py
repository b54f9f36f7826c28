"""Imaginary error function and the free-motion correlation kernel function f.

``erfi`` is evaluated in the first quadrant and extended by its odd and
conjugation symmetries, so both hold exactly. Inside the quadrant:

* ``Im z <= SWITCH_IMAG``: Maclaurin series. Its cancellation grows like
  ``exp(2 Im(z)^2)``, which this bound keeps below ~1e2.
* otherwise: erfi(z) = i (1 - exp(z^2) w(z)) with the Faddeeva function w from
  its Laplace continued fraction, which converges fast for Im z > 1.

Branch convention for f: every square root is the principal one, so
``sqrt(i a) = exp(i pi / 4) sqrt(a)`` for a > 0.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import UnitSystem

__all__ = [
    "OVERFLOW_GUARD",
    "SWITCH_IMAG",
    "erfi",
    "erfi_series",
    "erfi_continued_fraction",
    "f_kernel",
    "KernelPartials",
    "f_kernel_partials",
]

# erfi(z) ~ exp(z^2) / (sqrt(pi) z); refuse arguments where that overflows
OVERFLOW_GUARD = 700.0
SWITCH_IMAG = 1.5
_CF_TERMS = 160
_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)
_SQRT_I = complex(math.sqrt(0.5), math.sqrt(0.5))


def erfi_series(z):
    """Maclaurin series (2/sqrt(pi)) sum z^(2n+1) / (n! (2n+1))."""
    z = np.asarray(z, dtype=complex)
    z2 = z * z
    term = z.copy()
    total = np.zeros_like(z)
    n = 0
    active = np.ones(z.shape, dtype=bool)
    while np.any(active):
        contrib = term / (2 * n + 1)
        total = total + np.where(active, contrib, 0)
        n += 1
        term = term * z2 / n
        small = np.abs(term) / (2 * n + 1) <= 1e-17 * np.abs(total)
        active = active & ~(small & (n > 2))
        if n > 5000:
            break
    return _TWO_OVER_SQRTPI * total


def _faddeeva_cf(z, terms: int = _CF_TERMS):
    """w(z) for Im z > 0 from the Laplace continued fraction."""
    t = np.asarray(z, dtype=complex).copy()
    for k in range(terms, 0, -1):
        t = z - (0.5 * k) / t
    return (1j / math.sqrt(math.pi)) / t


def erfi_continued_fraction(z, terms: int = _CF_TERMS):
    """erfi(z) = i (1 - exp(z^2) w(z)); only meaningful for Im z > 0."""
    z = np.asarray(z, dtype=complex)
    return 1j * (1.0 - np.exp(z * z) * _faddeeva_cf(z, terms))


def erfi(z):
    """Imaginary error function erfi(z) = -i erf(iz) for complex (or real) z.

    Raises OverflowError when Re(z^2) exceeds :data:`OVERFLOW_GUARD`.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if not np.all(np.isfinite(z)):
        raise ValueError("erfi argument must be finite")
    if np.any((z * z).real > OVERFLOW_GUARD):
        raise OverflowError(f"erfi argument outside the range Re(z^2) <= {OVERFLOW_GUARD}")
    x = np.abs(z.real)
    y = np.abs(z.imag)
    q = x + 1j * y
    out = np.empty_like(q)
    use_series = y <= SWITCH_IMAG
    if np.any(use_series):
        out[use_series] = erfi_series(q[use_series])
    if np.any(~use_series):
        out[~use_series] = erfi_continued_fraction(q[~use_series])
    flip = np.signbit(z.real) ^ np.signbit(z.imag)
    out = np.where(flip, np.conj(out), out)
    out = np.where(np.signbit(z.real), -out, out)
    return complex(out[0]) if scalar else out


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ValueError("tau must be strictly positive")
    return tau


def f_kernel(x, tau, units: UnitSystem = UnitSystem()):
    """f(x) = -2 e^{i m x^2 / 2 hbar tau} (i pi hbar tau / 2m)^{1/2} + i pi x erfi((i m / 2 hbar tau)^{1/2} x)."""
    tau = _check_tau(tau)
    x = np.asarray(x, dtype=float)
    hb, m = units.hbar, units.mass
    gauss = np.exp(1j * m * x * x / (2 * hb * tau))
    amp = _SQRT_I * np.sqrt(math.pi * hb * tau / (2 * m))
    c = _SQRT_I * np.sqrt(m / (2 * hb * tau))
    out = -2 * gauss * amp + 1j * math.pi * x * erfi(c * x)
    return complex(out) if np.ndim(out) == 0 else out


class KernelPartials(NamedTuple):
    f_xx: complex
    f_xtau: complex
    f_tautau: complex


def f_kernel_partials(x, tau, units: UnitSystem = UnitSystem()) -> KernelPartials:
    """Second partial derivatives of f in (x, tau).

    With E = e^{i m x^2 / 2 hbar tau} and s = (i pi hbar / 2m)^{1/2}:
    f_x = i pi erfi(c x), f_tau = -s tau^{-1/2} E, hence
    f_xx = 2 i (m / hbar) s tau^{-1/2} E,
    f_xtau = -s tau^{-1/2} (i m x / hbar tau) E,
    f_tautau = s tau^{-3/2} (1/2 + i m x^2 / 2 hbar tau) E.
    None of them involves erfi. ``tau`` may also be complex with Re tau > 0
    (principal roots continue analytically there); ``x`` may then be complex.
    """
    tau = np.asarray(tau)
    if np.iscomplexobj(tau):
        if np.any(~(tau.real > 0)):
            raise ValueError("complex tau must have positive real part")
    else:
        tau = _check_tau(tau)
    x = np.asarray(x)
    hb, m = units.hbar, units.mass
    rt = np.sqrt(tau)
    E = np.exp(1j * m * x * x / (2 * hb * tau))
    s = _SQRT_I * math.sqrt(math.pi * hb / (2 * m))
    f_xx = 2j * (m / hb) * s / rt * E
    f_xtau = -s / rt * (1j * m * x / (hb * tau)) * E
    f_tautau = s / (rt * tau) * (0.5 + 1j * m * x * x / (2 * hb * tau)) * E
    return KernelPartials(f_xx, f_xtau, f_tautau)
