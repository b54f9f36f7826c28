"""Flux-flux correlation functions for free wavepackets.

The correlation operator is diagonal in momentum for free motion,
<k|C(tau)|k'> = delta(k - k') K(k, tau), with

    K(k, tau) = d^2/dtau^2 G(k, tau),
    G(k, tau) = (m / 2 pi hbar k) [2 f(v tau) - f(v tau - L) - f(v tau + L)],

v = hbar k / m and f from :mod:`dwellflux.specfun`. The tau-derivative is a
total one (x = v tau + D moves with tau); it is taken analytically,
d^2 f/dtau^2 = v^2 f_xx + 2 v f_xtau + f_tautau, and the erfi terms drop out.

K splits into a self part (D = 0), which diverges like tau^{-3/2} at small
tau, and a cross part (D = +-L), which carries the transit hump.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .core import (
    FunctionAmplitude,
    GaussCutPacket,
    MomentumAmplitude,
    PolynomialAmplitude,
    Region,
    UnitSystem,
    position_derivative,
    position_wavefunction,
)
from .freemotion import effective_window, onshell_power
from .numerics import (
    ExtrapolationLadder,
    IntegrationError,
    QuadratureSpec,
    bracket_and_refine,
    gauss_legendre_panels,
    integrate,
)
from .specfun import f_kernel, f_kernel_partials

__all__ = [
    "CUTOFF_FRACTION",
    "CorrelationCurve",
    "MomentReport",
    "HumpResult",
    "OrthogonalBasis",
    "ApproximationReport",
    "Kernel",
    "FreeKernel",
    "kernel_diag",
    "kernel_potential",
    "kernel_moment",
    "mean_momentum",
    "default_cutoff",
    "correlation_function",
    "correlation_curve",
    "correlation_moment",
    "hump_area",
    "pm_moment_oracle",
    "flux_expectation",
    "flux_bilinear",
    "cross_flux_polarization",
    "flux_time_grid",
    "c0_approximation",
    "c1_correction",
    "gram_schmidt_basis",
    "approximation_moments",
]

CUTOFF_FRACTION = 0.05
# below m L^2 / (2 hbar tau) > 1e8 rad the cross-term phase loses ~8 digits
PHASE_LIMIT = 1e8
_K_NODES = 16


# --------------------------------------------------------------------------
# result types


@dataclass(frozen=True)
class CorrelationCurve:
    tau_grid: np.ndarray
    values: np.ndarray
    tau_min_cutoff: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.tau_grid, dtype=float)
        if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0):
            raise ValueError("tau_grid must be strictly ascending")
        if not self.tau_min_cutoff > 0:
            raise ValueError("tau_min_cutoff must be positive")
        if t[0] < self.tau_min_cutoff:
            raise ValueError("tau_grid starts below the cutoff")
        if np.shape(self.values) != t.shape:
            raise ValueError("values and tau_grid differ in length")


_ROUTES = ("closed_form", "kernel_integral", "oracle")


@dataclass(frozen=True)
class MomentReport:
    order: int
    value: float
    est_error: float
    route: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.order not in (0, 1, 2, 3):
            raise ValueError("order must be 0..3")
        if self.route not in _ROUTES:
            raise ValueError(f"route must be one of {_ROUTES}")
        if not (math.isfinite(self.est_error) and self.est_error > 0):
            raise ValueError("est_error must be finite and positive")

    def to_json(self) -> dict:
        return {"n": self.order, "value": self.value, "est_error": self.est_error, "route": self.route}


@dataclass(frozen=True)
class HumpResult:
    area: float
    tau_lo: float
    tau_hi: float
    tau_peak: float
    est_error: float


# --------------------------------------------------------------------------
# kernels


class Kernel:
    """Diagonal momentum kernel K(k, tau) of a correlation operator."""

    def diag(self, k, tau):  # pragma: no cover - interface
        raise NotImplementedError

    def self_part(self, k, tau):  # pragma: no cover - interface
        raise NotImplementedError

    def cross_part(self, k, tau):  # pragma: no cover - interface
        raise NotImplementedError

    def self_moment_below(self, k, tau_c: float, order: int):  # pragma: no cover - interface
        """int_0^tau_c tau^order (self part) dtau, per k (finite part for order 0)."""
        raise NotImplementedError

    def tau_floor(self) -> float:  # pragma: no cover - interface
        raise NotImplementedError


class FreeKernel(Kernel):
    def __init__(self, region: Region, units: UnitSystem = UnitSystem()):
        self.region = region
        self.units = units

    def tau_floor(self) -> float:
        """Smallest tau at which the cross-term phase m L^2 / 2 hbar tau is still resolvable."""
        return self.units.mass * self.region.width**2 / (2 * self.units.hbar * PHASE_LIMIT)

    def _d2f(self, k, tau, D):
        """Total second tau-derivative of f(v tau + D; tau)."""
        v = self.units.hbar * k / self.units.mass
        x = v * tau + D
        p = f_kernel_partials(x, tau, self.units)
        return v * v * p.f_xx + 2 * v * p.f_xtau + p.f_tautau

    def _pref(self, k):
        return self.units.mass / (2 * math.pi * self.units.hbar * k)

    def self_part(self, k, tau):
        k, tau = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(tau))
        return self._pref(k) * 2 * self._d2f(k, tau, 0.0)

    def cross_part(self, k, tau):
        k, tau = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(tau))
        L = self.region.width
        return -self._pref(k) * (self._d2f(k, tau, -L) + self._d2f(k, tau, L))

    def diag(self, k, tau):
        return self.self_part(k, tau) + self.cross_part(k, tau)

    def potential(self, k, tau):
        """G(k, tau), whose second tau-derivative is the kernel (uses erfi)."""
        k = np.asarray(k, dtype=float)
        tau = np.asarray(tau, dtype=float)
        v = self.units.hbar * k / self.units.mass
        L = self.region.width
        f = lambda x: f_kernel(x, tau, self.units)  # noqa: E731
        return self._pref(k) * (2 * f(v * tau) - f(v * tau - L) - f(v * tau + L))

    def self_moment_below(self, k, tau_c: float, order: int, nodes: int | None = None):
        """int_0^tau_c tau^n K_self dtau for each k.

        K_self = (m s / pi hbar k) tau^{-1/2} e^{i w tau} [1/(2 tau) + i w] with
        w = hbar k^2 / 2m, s = (i pi hbar / 2m)^{1/2}. The pieces
        J_p = int_0^tau_c tau^p e^{i w tau} dtau are integrated in u = sqrt(tau).
        For n = 0 the tau^{-3/2} term is taken as a Hadamard finite part,
        FP J_{-3/2} = -2 tau_c^{-1/2} e^{i w tau_c} + 2 i w J_{-1/2}.
        """
        k = np.asarray(k, dtype=float)
        hb, m = self.units.hbar, self.units.mass
        w = hb * k * k / (2 * m)
        s = complex(math.sqrt(0.5), math.sqrt(0.5)) * math.sqrt(math.pi * hb / (2 * m))
        pref = m * s / (math.pi * hb * k)
        uc = math.sqrt(tau_c)
        if nodes is None:
            nodes = 32 + int(8 * float(np.max(w)) * tau_c / math.pi)
        u, wu = gauss_legendre_panels(0.0, uc, max(1, nodes // 32 + 1), 32)
        ph = np.exp(1j * np.outer(w, u * u))  # (k, u)

        def J(p2):  # int tau^{p2/2} e^{i w tau} dtau with p2 = 2p (odd), via tau = u^2
            return ph @ (wu * 2 * u ** (p2 + 1))

        if order == 0:
            j_half = J(-1)
            fp = -2 / uc * np.exp(1j * w * tau_c) + 2j * w * j_half
            return pref * (0.5 * fp + 1j * w * j_half)
        return pref * (0.5 * J(2 * order - 3) + 1j * w * J(2 * order - 1))


def _check_k_tau(k, tau, kernel: FreeKernel):
    k = np.asarray(k, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(~(k > 0)):
        raise ValueError("k must be positive")
    if np.any(~(tau > 0)):
        raise ValueError("tau must be positive")
    if np.any(tau < kernel.tau_floor()):
        raise ValueError(f"tau below the resolvable floor {kernel.tau_floor():.3g}")
    return k, tau


def kernel_diag(k, tau, region: Region, units: UnitSystem = UnitSystem()):
    """K(k, tau): analytic total second tau-derivative of G (complex; C uses its real part)."""
    kern = FreeKernel(region, units)
    k, tau = _check_k_tau(k, tau, kern)
    out = kern.diag(k, tau)
    return complex(out) if np.ndim(out) == 0 else out


def kernel_potential(k, tau, region: Region, units: UnitSystem = UnitSystem()):
    """G(k, tau) built from f and erfi; the finite-difference oracle for :func:`kernel_diag`."""
    kern = FreeKernel(region, units)
    k, tau = _check_k_tau(k, tau, kern)
    out = kern.potential(k, tau)
    return complex(out) if np.ndim(out) == 0 else out


def kernel_moment(
    k: float, region: Region, units: UnitSystem = UnitSystem(), order: int = 1, *, phi: float = math.pi / 4
) -> MomentReport:
    """int_0^inf tau^n Re K(k, tau) dtau at fixed k, for n = 1, 2, 3.

    At fixed k the integrand does not decay (it oscillates like e^{i w tau})
    and the cross part oscillates without bound as tau -> 0, so the integral
    exists only as an Abel limit. It is evaluated on a deformed contour in the
    right half plane, which gives that limit directly: the self part along the
    ray arg tau = +phi; the cross part along arg tau = -phi up to |tau| = T_kk,
    the arc |tau| = T_kk, then arg tau = +phi. On that path every exponential
    factor has modulus <= 1.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if not k > 0:
        raise ValueError("k must be positive")
    kern = FreeKernel(region, units)
    T = units.mass * region.width / (units.hbar * k)
    n = order
    up, down = np.exp(1j * phi), np.exp(-1j * phi)
    spec = QuadratureSpec(abs_tol=1e-14 * T**n, rel_tol=1e-12, max_subdivisions=4000)

    def ray(part, direction, lo, hi):
        if hi == math.inf:

            def g(r):
                tau = r * direction
                return (tau**n * part(k, tau) * direction).real

            return integrate(g, lo, hi, spec)

        def g(u):  # r = u^2 removes the tau^{-1/2} endpoint behaviour
            tau = u * u * direction
            return (tau**n * part(k, tau) * direction * 2 * u).real

        return integrate(g, math.sqrt(lo), math.sqrt(hi), spec)

    def arc(part):
        def g(psi_):
            tau = T * np.exp(1j * psi_)
            return (tau**n * part(k, tau) * 1j * tau).real

        return integrate(g, -phi, phi, spec)

    pieces = [
        ray(kern.self_part, up, 0.0, T),
        ray(kern.self_part, up, T, math.inf),
        ray(kern.cross_part, down, 0.0, T),
        arc(kern.cross_part),
        ray(kern.cross_part, up, T, math.inf),
    ]
    value = math.fsum(p[0] for p in pieces)
    err = math.fsum(p[1] for p in pieces) + 1e-14 * T**n
    return MomentReport(order, value, err, "kernel_integral", {"k": k, "contour_angle": phi})


# --------------------------------------------------------------------------
# C(tau) for a wavepacket


def mean_momentum(psi: MomentumAmplitude) -> float:
    k, w = psi.k_grid(400)
    rho = np.abs(psi(k)) ** 2 * w
    return float(np.sum(rho * k) / np.sum(rho))


def default_cutoff(psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem()) -> float:
    """tau_min = 0.05 m L / (hbar <k>)."""
    return CUTOFF_FRACTION * units.mass * region.width / (units.hbar * mean_momentum(psi))


class _CorrelationEvaluator:
    """C(tau) = Re int |psi~(k)|^2 K(k, tau) dk with phase-resolved k-grids."""

    def __init__(self, psi, region, units, kernel=None, window=None, min_panels: int = 200):
        self.psi, self.region, self.units = psi, region, units
        self.kernel = kernel or FreeKernel(region, units)
        self.window = window or effective_window(psi)
        self.min_panels = min_panels
        self._grids: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def n_panels(self, tau_max: float) -> int:
        lo, hi = self.window
        # phase rate in k of the cross terms: |D - v tau| <= L + hbar k tau / m
        rate = self.region.width + self.units.hbar * hi * tau_max / self.units.mass
        n = max(self.min_panels, math.ceil((hi - lo) * rate / (2 * math.pi)))
        return 1 << max(0, (n - 1).bit_length())  # power of two, so grids get reused

    def grid(self, n: int):
        if n not in self._grids:
            k, w = gauss_legendre_panels(*self.window, n, _K_NODES)
            self._grids[n] = (k, w * np.abs(self.psi(k)) ** 2)
        return self._grids[n]

    def __call__(self, tau, part: str = "full"):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.empty(tau.shape)
        order = np.argsort(tau)
        fn = {"full": self.kernel.diag, "self": self.kernel.self_part, "cross": self.kernel.cross_part}[part]
        i = 0
        while i < tau.size:
            n = self.n_panels(tau[order[min(i + 7, tau.size - 1)]])
            k, wr = self.grid(n)
            step = max(1, int(2_000_000 // k.size))
            idx = order[i : i + min(step, 8)]
            n = self.n_panels(float(np.max(tau[idx])))
            k, wr = self.grid(n)
            vals = fn(k[None, :], tau[idx, None]).real
            out[idx] = vals @ wr
            i += idx.size
        return out


def correlation_function(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    tau=1.0,
    *,
    tau_min_cutoff: float | None = None,
    kernel: Kernel | None = None,
):
    """C(tau) = Re int |psi~(k)|^2 K(k, tau) dk at tau >= the cutoff."""
    cut = default_cutoff(psi, region, units) if tau_min_cutoff is None else float(tau_min_cutoff)
    t = np.asarray(tau, dtype=float)
    if np.any(t < cut):
        raise ValueError(f"tau below the cutoff {cut:.6g}; C diverges as tau -> 0")
    out = _CorrelationEvaluator(psi, region, units, kernel)(t)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def correlation_curve(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    tau_grid: Sequence[float] = (),
    *,
    tau_min_cutoff: float | None = None,
) -> CorrelationCurve:
    cut = default_cutoff(psi, region, units) if tau_min_cutoff is None else float(tau_min_cutoff)
    t = np.asarray(tau_grid, dtype=float)
    vals = correlation_function(psi, region, units, t, tau_min_cutoff=cut)
    return CorrelationCurve(t, np.atleast_1d(vals), cut, {"k_nodes_per_panel": _K_NODES})


def _tau_max(psi, region, units, n_max: int = 2, rel: float = 1e-9):
    """Upper tau limit beyond which the classical transit tail holds < rel of the n_max moment.

    Returns (tau_max, tail) where tail[n] = int_{k < m L / hbar tau_max} |psi~|^2 (m L / hbar k)^n dk,
    i.e. the tau^n-moment of the heuristic distribution beyond tau_max.
    """
    lo, hi = effective_window(psi)
    k, w = gauss_legendre_panels(lo, hi, 800, 16)
    rho = np.abs(psi(k)) ** 2 * w
    T = units.mass * region.width / (units.hbar * k)
    cum = np.cumsum(rho * T**n_max)
    i = max(0, int(np.searchsorted(cum, rel * cum[-1])) - 1)
    tails = [float(np.sum((rho * T**n)[: i + 1])) for n in range(n_max + 1)]
    return float(T[i]), tails


def correlation_moment(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    order: int = 1,
    *,
    tau_min_cutoff: float | None = None,
    rel_tol: float = 1e-9,
) -> MomentReport:
    """int_0^inf tau^n C(tau) dtau for n = 0, 1, 2.

    Below the cutoff tau_c only the self part of K matters (the cross part
    needs k ~ m L / hbar tau, far outside the packet); its tau-integral is
    done per k in closed quadrature (finite part for n = 0). Above tau_c, C is
    integrated adaptively up to tau_max; the classical tail beyond tau_max
    and the cross part below tau_c enter the error estimate, as does the
    spread of the result when tau_c is halved and doubled.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    tc = default_cutoff(psi, region, units) if tau_min_cutoff is None else float(tau_min_cutoff)
    ev = _CorrelationEvaluator(psi, region, units)
    kern = ev.kernel
    n = order
    t_bar = units.mass * region.width / (units.hbar * mean_momentum(psi))
    tau_max, tails = _tau_max(psi, region, units, max(n, 1))
    if tau_max <= 4 * tc:
        raise ValueError("packet too slow for the cutoff: tau_max below 4 tau_c")
    # tolerance per segment is set against the moment's natural scale T_bar^n, so
    # small tail segments are not driven to the k-grid's noise floor
    spec = QuadratureSpec(abs_tol=0.1 * rel_tol * t_bar**n, rel_tol=rel_tol, max_subdivisions=20000)

    def f(t):
        return t**n * ev(t)

    # self part below each trial cutoff
    k, wr = ev.grid(ev.n_panels(2 * tc))
    below = {c: float(kern.self_moment_below(k, c, n).real @ wr) for c in (0.5 * tc, tc, 2 * tc)}
    # direct quadrature above
    seg = {}
    quad_err = 0.0
    edges = [0.5 * tc, tc, 2 * tc, min(4 * t_bar, 0.5 * tau_max), tau_max]
    if edges[3] <= edges[2]:
        edges[3] = 0.5 * (edges[2] + edges[4])
    osc_period = 2 * math.pi * units.mass / (units.hbar * mean_momentum(psi) ** 2)
    for a, b in zip(edges[:-1], edges[1:]):
        try:
            v, e = integrate(f, a, b, spec, period=osc_period if b <= edges[3] else None)
        except IntegrationError as exc:
            raise IntegrationError(f"moment integral did not converge on [{a:.4g}, {b:.4g}]: {exc}", exc.value, exc.error) from exc
        seg[(a, b)] = v
        quad_err += e
    vals = list(seg.values())
    above_tc = vals[1] + vals[2] + vals[3]
    value = below[tc] + above_tc
    variants = {
        0.5 * tc: below[0.5 * tc] + vals[0] + above_tc,
        2 * tc: below[2 * tc] + vals[2] + vals[3],
    }
    cutoff_spread = max(abs(v - value) for v in variants.values())
    # cross part dropped below tau_c: bounded by its size at the cutoff
    cross_at_cut = float(np.max(np.abs(ev(np.array([0.5 * tc, tc]), part="cross"))))
    cross_bound = cross_at_cut * tc ** (n + 1)
    tail = tails[n] if n >= 1 else tails[0]
    est = cutoff_spread + quad_err + cross_bound + tail + 1e-15 * max(abs(value), t_bar**n)
    details = {
        "tau_min_cutoff": tc,
        "tau_max": tau_max,
        "cutoff_values": {"half": variants[0.5 * tc], "nominal": value, "double": variants[2 * tc]},
        "below_cutoff": below[tc],
        "tail_estimate": tail,
        "cross_below_cutoff_bound": cross_bound,
        "quadrature_error": quad_err,
    }
    return MomentReport(n, value, est, "kernel_integral", details)


def hump_area(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    *,
    scan_points: int = 3000,
) -> HumpResult:
    """Area under the transit hump of C(tau).

    The hump is the widest interval around the global maximum of C on which
    C > 0; its ends are refined sign changes of C.
    """
    ev = _CorrelationEvaluator(psi, region, units)
    tc = default_cutoff(psi, region, units)
    tau_max, _ = _tau_max(psi, region, units)
    t_bar = units.mass * region.width / (units.hbar * mean_momentum(psi))
    # the hump sits near the classical transit time; the self part dominates well below it
    grid = np.linspace(max(tc, 0.2 * t_bar), min(tau_max, 16 * t_bar), scan_points)
    vals = ev(grid)
    i = int(np.argmax(vals))
    lo_i = i
    while lo_i > 0 and vals[lo_i - 1] > 0:
        lo_i -= 1
    hi_i = i
    while hi_i < grid.size - 1 and vals[hi_i + 1] > 0:
        hi_i += 1
    if lo_i == 0 or hi_i == grid.size - 1:
        raise ValueError("C(tau) stays positive up to the end of the scan; hump not bracketed")

    def C(t):
        return ev(t)

    lo = bracket_and_refine(C, (grid[lo_i - 1], grid[lo_i]), 2, grid=grid[lo_i - 1 : lo_i + 1], fgrid=vals[lo_i - 1 : lo_i + 1])[0]
    hi = bracket_and_refine(C, (grid[hi_i], grid[hi_i + 1]), 2, grid=grid[hi_i : hi_i + 2], fgrid=vals[hi_i : hi_i + 2])[0]
    spec = QuadratureSpec(abs_tol=1e-12, rel_tol=1e-11, max_subdivisions=4000)
    area, err = integrate(C, float(lo), float(hi), spec)
    return HumpResult(area, float(lo), float(hi), float(grid[i]), err + 1e-12)


# --------------------------------------------------------------------------
# microcanonical oracle


def _pm_damped_moment(k: float, region: Region, units: UnitSystem, n: int, eps: float):
    """Abel-damped n-th moment of the microcanonical correlation from plane waves.

    Inserting momentum states |q> between the two flux operators, with
    <k|J(x)|q> = (hbar / 4 pi m)(k + q) e^{i(q-k)x}, the damped tau-integral
    int_0^inf tau^n e^{-eps tau} e^{i Omega tau} dtau = n! / (eps - i Omega)^{n+1}
    (Omega = hbar (k^2 - q^2) / 2m) is exact and leaves the q-integral
    (hbar / 8 pi m k) Re int dq (k+q)^2 2 (cos((q-k)L) - 1) n! / (eps - i Omega)^{n+1}.
    """
    hb, m = units.hbar, units.mass
    L = region.width
    fact = math.factorial(n)

    def g(q):
        total = np.zeros(np.shape(q))
        for qq in (q, -q):
            om = hb * (k * k - qq * qq) / (2 * m)
            total += ((k + qq) ** 2 * 2 * (np.cos((qq - k) * L) - 1) * fact / (eps - 1j * om) ** (n + 1)).real
        return total

    width = eps * m / (hb * k)  # q-width of the resonance at q = k
    pts = sorted({k + s * c * width for s in (-1, 1) for c in (1, 3, 10, 30, 100)} | {k})
    pts = [p for p in pts if p > 0]
    q_split = 3 * k + 60 / L + 200 * width
    # the eps -> 0 extrapolation error (~1e-3 relative) dominates; 1e-10 is ample here
    spec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-10, max_subdivisions=20000, singular_points=tuple(pts))
    v1, e1 = integrate(g, 0.0, q_split, spec, period=2 * math.pi / L)

    # tail: with A(+-q) = (k +- q)^2 n! / (eps - i Omega)^{n+1} the integrand is
    # 2 cos(qL) cos(kL) Re(A+ + A-) + 2 sin(qL) sin(kL) Re(A+ - A-) - 2 Re(A+ + A-)
    def amp(q, sgn):
        om = hb * (k * k - q * q) / (2 * m)
        return ((k + sgn * q) ** 2 * fact / (eps - 1j * om) ** (n + 1)).real

    def even(q):
        return amp(q, 1) + amp(q, -1)

    def odd(q):
        return amp(q, 1) - amp(q, -1)

    tail_spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12, max_subdivisions=2000)
    v2, e2 = integrate(lambda q: -2 * even(q), q_split, math.inf, tail_spec)
    vc, ec = quad(even, q_split, math.inf, weight="cos", wvar=L, epsabs=1e-14, limlst=200)
    vs, es = quad(odd, q_split, math.inf, weight="sin", wvar=L, epsabs=1e-14, limlst=200)
    v2 += 2 * math.cos(k * L) * vc + 2 * math.sin(k * L) * vs
    e2 += 2 * (ec + es)
    pref = hb / (8 * math.pi * m * k)
    return pref * (v1 + v2), pref * (e1 + e2)


def pm_moment_oracle(
    k: float,
    region: Region,
    units: UnitSystem = UnitSystem(),
    order: int = 1,
    eps_factors: Sequence[float] = (0.02, 0.01, 0.005),
) -> MomentReport:
    """Brute-force n-th tau-moment of the microcanonical flux correlation at momentum k.

    Evaluated at eps = factor * hbar k^2 / m for each factor and extrapolated
    to eps -> 0 by Richardson (polynomial) extrapolation.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if not k > 0:
        raise ValueError("k must be positive")
    scale = units.hbar * k * k / units.mass
    eps = np.array(eps_factors, dtype=float) * scale
    vals, qerr = [], 0.0
    for e in eps:
        v, err = _pm_damped_moment(k, region, units, order, float(e))
        vals.append(v)
        qerr += err
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ladder = ExtrapolationLadder(tuple(eps), tuple(vals))
        limit, err = ladder.limit, ladder.error
    flagged = any("monoton" in str(w.message) for w in caught)
    return MomentReport(
        order,
        limit,
        err + qerr + 1e-15 * abs(limit),
        "oracle",
        {"eps": eps.tolist(), "values": vals, "non_monotone": flagged},
    )


# --------------------------------------------------------------------------
# fluxes


def _waves(amp: MomentumAmplitude, x, t, units: UnitSystem, method: str = "auto"):
    """(psi(x, t), d psi / dx) for scalar or array x and t."""
    if method not in ("auto", "closed_form", "quadrature"):
        raise ValueError("method must be auto, closed_form or quadrature")
    if method != "quadrature":
        if isinstance(amp, PolynomialAmplitude):
            return amp.wave_and_derivative(x, t, units)
        if isinstance(amp, GaussCutPacket):
            return PolynomialAmplitude.of(amp).wave_and_derivative(x, t, units)
        if method == "closed_form":
            raise TypeError("no closed form for this amplitude")
    xb, tb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    w = np.empty(xb.shape, dtype=complex)
    d = np.empty(xb.shape, dtype=complex)
    for tv in np.unique(tb):
        sel = tb == tv
        w[sel] = position_wavefunction(amp, xb[sel], float(tv), units)
        d[sel] = position_derivative(amp, xb[sel], float(tv), units)
    if w.ndim == 0:
        return complex(w), complex(d)
    return w, d


def flux_expectation(psi: MomentumAmplitude, x, t, units: UnitSystem = UnitSystem(), *, method: str = "auto"):
    """<J(x, t)> = (hbar / m) Im[psi^* d psi / dx]."""
    w, d = _waves(psi, x, t, units, method)
    out = units.hbar / units.mass * np.imag(np.conj(w) * d)
    return float(out) if np.ndim(out) == 0 else out


def flux_bilinear(psi: MomentumAmplitude, phi: MomentumAmplitude, x, t, units: UnitSystem = UnitSystem(), *, method: str = "auto"):
    """<psi|J(x, t)|phi> = (hbar / 2 i m)[psi^* d phi - phi d psi^*], evaluated directly."""
    a, da = _waves(psi, x, t, units, method)
    b, db = _waves(phi, x, t, units, method)
    out = units.hbar / (2j * units.mass) * (np.conj(a) * db - b * np.conj(da))
    return complex(out) if np.ndim(out) == 0 else out


def _combine(psi: MomentumAmplitude, phi: MomentumAmplitude, c: complex) -> MomentumAmplitude:
    """Amplitude psi + c phi."""
    def as_poly(a):
        if isinstance(a, PolynomialAmplitude):
            return a
        if isinstance(a, GaussCutPacket):
            return PolynomialAmplitude.of(a)
        return None

    p, q = as_poly(psi), as_poly(phi)
    if p is not None and q is not None and (p.base is q.base or p.base == q.base):
        return p + q.scaled(c)
    lo = min(psi.k_min, phi.k_min)
    hi = max(psi.k_max, phi.k_max)
    return FunctionAmplitude(lambda k: psi(k) + c * phi(k), (lo, hi), psi.centre)


def cross_flux_polarization(
    psi: MomentumAmplitude, psiQ: MomentumAmplitude, x, t, units: UnitSystem = UnitSystem(), *, method: str = "auto"
):
    """<psi|J(x, t)|psiQ> from diagonal flux expectations only.

    With psi1 = psi + psiQ, psi2 = psi + i psiQ, psi3 = psi - i psiQ and
    J_n = <psi_n|J|psi_n>:
    <psi|J|psiQ> = J_1/2 - J_2/4 - J_3/4 + (i/4) J_3 - (i/4) J_2.
    """
    j1 = flux_expectation(_combine(psi, psiQ, 1.0), x, t, units, method=method)
    j2 = flux_expectation(_combine(psi, psiQ, 1j), x, t, units, method=method)
    j3 = flux_expectation(_combine(psi, psiQ, -1j), x, t, units, method=method)
    out = 0.5 * np.asarray(j1) - 0.25 * np.asarray(j2) - 0.25 * np.asarray(j3) + 0.25j * np.asarray(j3) - 0.25j * np.asarray(j2)
    return complex(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# C0 / C1 approximations


def _packet_width(psi: MomentumAmplitude) -> tuple[float, float]:
    k, w = psi.k_grid(400)
    rho = np.abs(psi(k)) ** 2 * w
    rho /= rho.sum()
    mean = float(np.sum(rho * k))
    return mean, float(np.sqrt(np.sum(rho * (k - mean) ** 2)))


def flux_time_grid(
    psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem(), h: float | None = None, tail: float = 1e-13
) -> np.ndarray:
    """Uniform t-grid from 0 until the slowest relevant momenta have crossed x2.

    The default step resolves the flux signal: 0.04 / (hbar <k> sigma_k / m).
    """
    mean, sigma = _packet_width(psi)
    if h is None:
        h = 0.04 * units.mass / (units.hbar * mean * sigma)
    k_lo, _ = effective_window(psi, tail=tail)
    dist = region.x2 - psi.centre
    t_hi = 1.1 * dist * units.mass / (units.hbar * k_lo)
    n = int(math.ceil(t_hi / h))
    return np.arange(n + 1) * h


def _check_window(t, fluxes, tol: float):
    for j in fluxes:
        total = np.trapezoid(j, t)
        if abs(1 - total) > tol:
            raise ValueError(f"t-window misses flux mass {abs(1 - total):.3g} (> {tol:g}); enlarge it")


def c0_approximation(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    tau=1.0,
    *,
    h: float | None = None,
    window_tol: float = 1e-6,
):
    """C0(tau): the flux-product approximation, time-integrated on a truncated window."""
    t = flux_time_grid(psi, region, units, h)
    j1 = flux_expectation(psi, region.x1, t, units)
    j2 = flux_expectation(psi, region.x2, t, units)
    _check_window(t, (j1, j2), window_tol)
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.empty(taus.shape)
    for i, s in enumerate(taus):
        j1s = flux_expectation(psi, region.x1, t + s, units)
        j2s = flux_expectation(psi, region.x2, t + s, units)
        out[i] = np.trapezoid(j2s * j1 + j1s * j2 - j1s * j1 - j2s * j2, t)
    return float(out[0]) if np.ndim(tau) == 0 else out


def c1_correction(
    psi: MomentumAmplitude,
    basis: "OrthogonalBasis",
    region: Region,
    units: UnitSystem = UnitSystem(),
    tau=1.0,
    *,
    h: float | None = None,
):
    """C1(tau) = Re sum_j int dt [b_j(t+tau) a_j(t)^* + a_j(t+tau) b_j(t)^* - a_j(t+tau) a_j(t)^* - b_j(t+tau) b_j(t)^*].

    a_j(t) = <psi|J(x1, t)|psi_j>, b_j(t) = <psi|J(x2, t)|psi_j>, each from
    :func:`cross_flux_polarization`. An empty basis gives 0.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.zeros(taus.shape)
    if len(basis.members) == 0:
        return float(out[0]) if np.ndim(tau) == 0 else out
    t = flux_time_grid(psi, region, units, h)
    for phi in basis.members:
        a = cross_flux_polarization(psi, phi, region.x1, t, units)
        b = cross_flux_polarization(psi, phi, region.x2, t, units)
        for i, s in enumerate(taus):
            a_s = cross_flux_polarization(psi, phi, region.x1, t + s, units)
            b_s = cross_flux_polarization(psi, phi, region.x2, t + s, units)
            integrand = b_s * np.conj(a) + a_s * np.conj(b) - a_s * np.conj(a) - b_s * np.conj(b)
            out[i] += np.trapezoid(integrand, t).real
    return float(out[0]) if np.ndim(tau) == 0 else out


@dataclass(frozen=True)
class OrthogonalBasis:
    reference: MomentumAmplitude
    members: tuple
    gram: np.ndarray
    overlaps: np.ndarray

    def __post_init__(self):
        n = len(self.members)
        if n and np.max(np.abs(self.gram - np.eye(n))) > 1e-10:
            raise AssertionError("basis Gram matrix deviates from identity by more than 1e-10")
        if n and np.max(np.abs(self.overlaps)) > 1e-10:
            raise AssertionError("basis is not orthogonal to the reference state")

    def __len__(self):
        return len(self.members)


def gram_schmidt_basis(psi: MomentumAmplitude, order: int, *, cond_threshold: float = 1e-9) -> OrthogonalBasis:
    """Orthonormalise {k^j psi~}_{j=1..order} against psi~ and each other.

    The monomials are taken in the shifted, scaled variable s = (k - <k>)/sigma_k,
    which spans the same space as k^j but keeps the Gram-Schmidt well
    conditioned. Each member is P_j(k) psi~(k) with a real polynomial P_j; two
    projection passes are made. A family member whose residual norm falls
    below ``cond_threshold`` is numerically dependent and raises ValueError.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    P = np.polynomial.polynomial
    k, w = psi.k_grid(800)
    rho = np.abs(psi(k)) ** 2 * w
    mean, sigma = _packet_width(psi)

    def ip(c1, c2):
        return float(np.sum(rho * P.polyval(k, c1) * P.polyval(k, c2)))

    polys = [np.array([1.0])]
    for j in range(1, order + 1):
        c = P.polypow([-mean / sigma, 1.0 / sigma], j)
        norm0 = math.sqrt(ip(c, c))
        for _ in range(2):
            for b in polys:
                c = P.polysub(c, ip(b, c) * b)
        nrm = math.sqrt(max(ip(c, c), 0.0))
        if nrm < cond_threshold * norm0:
            raise ValueError(f"family member {j} is numerically dependent (residual {nrm / norm0:.2g})")
        polys.append(c / nrm)

    members = []
    for c in polys[1:]:
        if isinstance(psi, GaussCutPacket):
            members.append(PolynomialAmplitude(psi, c))
        elif isinstance(psi, PolynomialAmplitude):
            members.append(PolynomialAmplitude(psi.base, P.polymul(psi.coeffs, c)))
        else:
            members.append(FunctionAmplitude(lambda kk, c=c: P.polyval(kk, c) * psi(kk), psi.support, psi.centre))
    amps = [m(k) for m in members]
    ref = psi(k)
    gram = np.array([[np.sum(w * np.conj(a) * b) for b in amps] for a in amps])
    overlaps = np.array([np.sum(w * np.conj(ref) * a) for a in amps])
    return OrthogonalBasis(psi, tuple(members), gram, overlaps)


def _abs_kernel_moment(t, f, g):
    """int int |t - s| f(t) g(s) dt ds on a uniform grid (trapezoid, O(N))."""
    from scipy.integrate import cumulative_trapezoid

    b0 = cumulative_trapezoid(g, t, initial=0)
    b1 = cumulative_trapezoid(g * t, t, initial=0)
    H = 2 * (t * b0 - b1) + b1[-1] - t * b0[-1]
    return np.trapezoid(f * H, t)


@dataclass(frozen=True)
class ApproximationReport:
    reference: float  # first moment of C (equal to the mean dwell time)
    moments: tuple  # first moments of C0, C0+C1(order 1), ..., C0+C1(order N)
    h: float

    @property
    def relative_errors(self) -> tuple:
        return tuple((m - self.reference) / self.reference for m in self.moments)


def approximation_moments(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    order: int = 0,
    *,
    reference: float | None = None,
    h: float | None = None,
    window_tol: float = 1e-6,
) -> ApproximationReport:
    """First tau-moments of C0 and of C0 + C1 truncated at each basis order up to ``order``.

    The first moment of a correlation built from time signals a, b (at x1, x2)
    is Re int int |t - s| [b(t) a(s)^* - a(t) a(s)^*/2 - b(t) b(s)^*/2] dt ds,
    evaluated in O(N) from cumulative integrals. ``reference`` defaults to
    the mean dwell time int |psi~|^2 m L / hbar k dk.
    """
    t = flux_time_grid(psi, region, units, h)
    step = float(t[1] - t[0])
    j1 = flux_expectation(psi, region.x1, t, units)
    j2 = flux_expectation(psi, region.x2, t, units)
    _check_window(t, (j1, j2), window_tol)

    def m1(a, b):
        ac, bc = np.conj(a), np.conj(b)
        return float(
            (_abs_kernel_moment(t, b, ac) - 0.5 * _abs_kernel_moment(t, a, ac) - 0.5 * _abs_kernel_moment(t, b, bc)).real
        )

    acc = m1(j1.astype(complex), j2.astype(complex))
    moments = [acc]
    if order > 0:
        basis = gram_schmidt_basis(psi, order)
        for phi in basis.members:
            a = cross_flux_polarization(psi, phi, region.x1, t, units)
            b = cross_flux_polarization(psi, phi, region.x2, t, units)
            acc += m1(a, b)
            moments.append(acc)
    if reference is None:
        lo, hi = effective_window(psi)
        spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12)
        reference, _ = integrate(lambda k: np.abs(psi(k)) ** 2 * onshell_power(k, 1, region, units), lo, hi, spec)
    return ApproximationReport(float(reference), tuple(moments), step)
