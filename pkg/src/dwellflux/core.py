"""Units, spatial region and momentum-space states.

States are always held as momentum amplitudes on k > 0; position-space values
are derived from them by quadrature (or, for the cut-Gaussian family, from a
closed form in terms of the Faddeeva function).
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from scipy.special import wofz

from .numerics import IntegrationError, QuadratureSpec, gauss_legendre_panels, integrate

__all__ = [
    "UnitSystem",
    "Region",
    "MomentumAmplitude",
    "FunctionAmplitude",
    "GaussCutPacket",
    "PolynomialAmplitude",
    "make_gauss_cut_packet",
    "position_wavefunction",
    "position_derivative",
    "region_overlap",
    "load_config",
    "NORM_TOL",
    "TAIL_TOL",
]

NORM_TOL = 1e-10
TAIL_TOL = 1e-12
SUPPORT_WIDTHS = 12.0


@dataclass(frozen=True)
class UnitSystem:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError("hbar and mass must be strictly positive")

    def velocity(self, k):
        return self.hbar * np.asarray(k) / self.mass


@dataclass(frozen=True)
class Region:
    x1: float
    x2: float

    def __post_init__(self):
        if not self.x2 > self.x1:
            raise ValueError(f"region needs x2 > x1, got [{self.x1}, {self.x2}]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @classmethod
    def of_width(cls, L: float) -> "Region":
        return cls(0.0, float(L))


class MomentumAmplitude:
    """A positive-momentum amplitude k -> psi~(k).

    Subclasses provide ``_eval`` for k > 0 and the support window
    ``(k_min, k_max)`` outside which |psi~| is below :data:`TAIL_TOL`.
    ``centre`` is the position the amplitude's phase refers to (used only as
    an oscillation hint by the quadratures).
    """

    k_min: float
    k_max: float
    centre: float = 0.0

    def _eval(self, k: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        out = np.zeros(k.shape, dtype=complex)
        pos = k > 0
        if np.any(pos):
            out[pos] = self._eval(k[pos])
        return out if out.ndim else complex(out)

    @property
    def support(self) -> tuple[float, float]:
        return (self.k_min, self.k_max)

    def k_grid(self, n_panels: int = 200, order: int = 16):
        """Composite Gauss-Legendre nodes/weights covering the support."""
        return gauss_legendre_panels(self.k_min, self.k_max, n_panels, order)

    def norm2(self, n_panels: int = 400) -> float:
        k, w = self.k_grid(n_panels)
        return float(np.sum(w * np.abs(self(k)) ** 2))

    def inner(self, other: "MomentumAmplitude", n_panels: int = 400) -> complex:
        """<self|other> on the union of both supports."""
        lo = min(self.k_min, other.k_min)
        hi = max(self.k_max, other.k_max)
        k, w = gauss_legendre_panels(lo, hi, n_panels)
        return complex(np.sum(w * np.conj(self(k)) * other(k)))


class FunctionAmplitude(MomentumAmplitude):
    """Amplitude given by an arbitrary vectorised callable."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], support, centre: float = 0.0):
        self.func = func
        self.k_min, self.k_max = (float(support[0]), float(support[1]))
        if not (0 <= self.k_min < self.k_max):
            raise ValueError("support must satisfy 0 <= k_min < k_max")
        self.centre = float(centre)

    def _eval(self, k):
        return np.asarray(self.func(k), dtype=complex)


def _gauss_halfline_moments(A, B, c, nmax: int):
    """I_n = int_0^inf k^n exp(-A k^2 + B k + c) dk for n = 0..nmax (Re A > 0).

    Uses exp(z^2) erfc(z) = w(iz) with z = -B / (2 sqrt(A)); when Re z < 0 the
    reflection 2 exp(z^2) - w(-iz) keeps every factor bounded.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    A, B = np.broadcast_arrays(A, B)
    sqA = np.sqrt(A)
    z = -B / (2 * sqA)
    ec = np.exp(c)
    neg = z.real < 0
    E = np.empty(z.shape, dtype=complex)
    E[~neg] = ec * wofz(1j * z[~neg])
    zn = z[neg]
    E[neg] = 2 * np.exp(c + zn * zn) - ec * wofz(-1j * zn)
    out = [0.5 * np.sqrt(np.pi) / sqA * E]
    if nmax >= 1:
        out.append((B * out[0] + ec) / (2 * A))
    for n in range(2, nmax + 1):
        out.append((B * out[n - 1] + (n - 1) * out[n - 2]) / (2 * A))
    return out


class GaussCutPacket(MomentumAmplitude):
    """psi~(k) = N (1 - exp(-alpha k^2)) exp(-(k-k0)^2 / (4 dk^2)) exp(-i k x0), k > 0."""

    def __init__(self, alpha: float, k0: float, dk: float, x0: float, norm: float):
        self.alpha = float(alpha)
        self.k0 = float(k0)
        self.dk = float(dk)
        self.x0 = float(x0)
        self.norm = float(norm)
        self.centre = self.x0
        self.k_min = 0.0
        self.k_max = self.k0 + SUPPORT_WIDTHS * self.dk

    def __repr__(self):
        return (
            f"GaussCutPacket(alpha={self.alpha}, k0={self.k0}, dk={self.dk}, "
            f"x0={self.x0}, norm={self.norm:.12g})"
        )

    def __eq__(self, other):
        return isinstance(other, GaussCutPacket) and (
            (self.alpha, self.k0, self.dk, self.x0, self.norm)
            == (other.alpha, other.k0, other.dk, other.x0, other.norm)
        )

    def __hash__(self):
        return hash((self.alpha, self.k0, self.dk, self.x0, self.norm))

    def envelope(self, k):
        """Real, unnormalised |psi~| profile."""
        k = np.asarray(k, dtype=float)
        return -np.expm1(-self.alpha * k * k) * np.exp(-((k - self.k0) ** 2) / (4 * self.dk**2))

    def _eval(self, k):
        return self.norm * self.envelope(k) * np.exp(-1j * k * self.x0)

    def probability_below(self, k):
        """Momentum probability carried by (0, k)."""
        kk, w = gauss_legendre_panels(0.0, float(k), 64)
        return float(np.sum(w * np.abs(self(kk)) ** 2))

    def _components(self):
        a1 = 1.0 / (4 * self.dk**2)
        b = self.k0 / (2 * self.dk**2)
        c = -self.k0**2 / (4 * self.dk**2)
        return ((a1, b, c, 1.0), (a1 + self.alpha, b, c, -1.0))

    def kmoment_waves(self, x, t, nmax: int, units: UnitSystem = UnitSystem()):
        """psi_n(x, t) = (2 pi)^-1/2 int_0^inf k^n psi~(k) exp(ikx - i hbar k^2 t / 2m) dk.

        Returns a list of complex arrays for n = 0..nmax (closed form).
        """
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x, t = np.broadcast_arrays(x, t)
        total = [np.zeros(x.shape, dtype=complex) for _ in range(nmax + 1)]
        for a, b, c, sign in self._components():
            A = a + 0.5j * units.hbar * t / units.mass
            B = b + 1j * (x - self.x0)
            moments = _gauss_halfline_moments(A, B, c, nmax)
            for n in range(nmax + 1):
                total[n] += sign * moments[n]
        scale = self.norm / math.sqrt(2 * math.pi)
        return [scale * m for m in total]


class PolynomialAmplitude(MomentumAmplitude):
    """P(k) times a cut-Gaussian packet, P(k) = sum_n coeffs[n] k^n (complex coeffs)."""

    def __init__(self, base: GaussCutPacket, coeffs):
        self.base = base
        self.coeffs = np.asarray(coeffs, dtype=complex)
        self.k_min, self.k_max = base.k_min, base.k_max
        self.centre = base.centre

    def _eval(self, k):
        return np.polynomial.polynomial.polyval(k, self.coeffs) * self.base._eval(k)

    def __add__(self, other: "PolynomialAmplitude") -> "PolynomialAmplitude":
        if other.base is not self.base and other.base != self.base:
            raise ValueError("can only add amplitudes built on the same packet")
        n = max(len(self.coeffs), len(other.coeffs))
        c = np.zeros(n, dtype=complex)
        c[: len(self.coeffs)] += self.coeffs
        c[: len(other.coeffs)] += other.coeffs
        return PolynomialAmplitude(self.base, c)

    def scaled(self, s: complex) -> "PolynomialAmplitude":
        return PolynomialAmplitude(self.base, s * self.coeffs)

    @classmethod
    def of(cls, packet: GaussCutPacket) -> "PolynomialAmplitude":
        return cls(packet, [1.0])

    def wave_and_derivative(self, x, t, units: UnitSystem = UnitSystem()):
        """(psi(x,t), d psi/dx (x,t)) from the closed-form k-moments."""
        deg = len(self.coeffs) - 1
        waves = self.base.kmoment_waves(x, t, deg + 1, units)
        psi = sum(c * waves[n] for n, c in enumerate(self.coeffs))
        dpsi = sum(1j * c * waves[n + 1] for n, c in enumerate(self.coeffs))
        return psi, dpsi


def make_gauss_cut_packet(
    alpha: float, k0: float, dk: float, x0: float = 0.0, units: UnitSystem = UnitSystem()
) -> GaussCutPacket:
    """Build the normalised cut-Gaussian packet.

    The normalisation constant is computed numerically from the integral of
    |psi~|^2 over (0, k0 + 12 dk).
    """
    for name, v in (("alpha", alpha), ("k0", k0), ("dk", dk)):
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive number, got {v!r}")
    trial = GaussCutPacket(alpha, k0, dk, x0, 1.0)
    # the bulk of the weight sits within a few dk of k0; split there
    breaks = (k0 - 6 * dk, k0, k0 + 6 * dk)
    spec = QuadratureSpec(abs_tol=1e-300, rel_tol=1e-13, singular_points=breaks)
    try:
        n2, _ = integrate(lambda k: trial.envelope(k) ** 2, 0.0, trial.k_max, spec)
    except IntegrationError as exc:
        raise ValueError(f"normalisation integral did not converge: {exc}") from exc
    if not n2 > 0:
        raise ValueError("packet has zero norm")
    return GaussCutPacket(alpha, k0, dk, x0, 1.0 / math.sqrt(n2))


def _phase_rate(psi: MomentumAmplitude, x, t, units: UnitSystem) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v_max = units.hbar * psi.k_max / units.mass
    d = np.abs(x - psi.centre)
    return float(np.max(d) + v_max * abs(float(t)) + 1.0)


def _kspace_transform(psi, x, t, units, power: int, tol: float, max_doublings: int = 8):
    """(2 pi)^-1/2 int psi~(k) (ik)^power exp(ikx - i hbar k^2 t/2m) dk, vectorised in x.

    Composite Gauss-Legendre in k with the panel count set by the largest
    phase rate, doubled until successive results agree to ``tol``.
    """
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    rate = _phase_rate(psi, flat, t, units)
    span = psi.k_max - psi.k_min
    # 16-point panels, at least 8 nodes per 2 pi of phase
    n_panels = max(32, int(math.ceil(span * rate / (2 * math.pi) * 8 / 16)))
    prev = None
    for _ in range(max_doublings):
        k, w = gauss_legendre_panels(psi.k_min, psi.k_max, n_panels, 16)
        amp = psi(k) * w * (1j * k) ** power
        phase_t = np.exp(-0.5j * units.hbar * k * k * float(t) / units.mass)
        res = np.empty(flat.shape, dtype=complex)
        for i0 in range(0, flat.size, 256):
            xs = flat[i0 : i0 + 256]
            res[i0 : i0 + 256] = np.exp(1j * np.outer(xs, k)) @ (amp * phase_t)
        res /= math.sqrt(2 * math.pi)
        if prev is not None and np.max(np.abs(res - prev)) <= tol:
            return res.reshape(x.shape) if x.ndim else complex(res[0])
        prev = res
        n_panels *= 2
    raise IntegrationError(
        f"k-quadrature did not converge at t={t} (last change "
        f"{np.max(np.abs(res - prev)):.3g})",
        float("nan"),
        float(np.max(np.abs(res - prev))),
    )


def position_wavefunction(
    psi: MomentumAmplitude, x, t: float, units: UnitSystem = UnitSystem(), tol: float = 1e-12
):
    """psi(x, t) = (2 pi)^-1/2 int_0^inf psi~(k) exp(ikx - i hbar k^2 t / 2m) dk.

    ``x`` may be a scalar or an array; ``t`` is a scalar. Evaluated by
    oscillation-resolved quadrature with resolution doubling.
    """
    return _kspace_transform(psi, x, t, units, 0, tol)


def position_derivative(
    psi: MomentumAmplitude, x, t: float, units: UnitSystem = UnitSystem(), tol: float = 1e-12
):
    """d psi / dx at (x, t), same quadrature as :func:`position_wavefunction`."""
    return _kspace_transform(psi, x, t, units, 1, tol)


def region_overlap(psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem()) -> float:
    """Probability of finding the initial (t = 0) state inside the region."""
    x, w = gauss_legendre_panels(region.x1, region.x2, max(8, int(region.width)), 16)
    dens = np.abs(position_wavefunction(psi, x, 0.0, units, tol=1e-14)) ** 2
    return float(np.sum(w * dens))


_REQUIRED = ("alpha", "k0", "dk", "x0", "x1", "x2")


def load_config(source: str | Path | Mapping[str, Any]) -> dict[str, Any]:
    """Read a flat key-value config (JSON, or TOML by file suffix).

    Every physical parameter is mandatory except ``hbar`` and ``mass``,
    which default to 1.
    """
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        path = Path(source)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ValueError(f"config is missing required keys: {', '.join(missing)}")
    cfg = dict(raw)
    cfg.setdefault("hbar", 1.0)
    cfg.setdefault("mass", 1.0)
    for key in _REQUIRED + ("hbar", "mass"):
        try:
            cfg[key] = float(cfg[key])
        except (TypeError, ValueError):
            raise ValueError(f"config key {key!r} must be a number, got {cfg[key]!r}") from None
    return cfg
