"""Closed-form dwell-time quantities for free motion across a region of width L.

On the energy shell the dwell-time operator acts on the two-dimensional space
spanned by e^{+ikx} and e^{-ikx}; its eigenvalues are

    t_pm(k) = (m L / hbar k) [1 pm sin(kL) / kL].

Everything else here (moments, the third moment of the microcanonical flux
correlation, and the distributions Pi and pi) follows from these two branches.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import MomentumAmplitude, Region, UnitSystem
from .numerics import QuadratureSpec, bracket_and_refine, integrate

__all__ = [
    "OnShellDwell",
    "BranchRoot",
    "dwell_eigenvalues",
    "branch_time",
    "branch_slope",
    "onshell_moments",
    "onshell_power",
    "pm_third_moment",
    "effective_window",
    "find_branch_roots",
    "dwell_distribution",
    "DistributionPoint",
    "dwell_distribution_moments",
    "heuristic_distribution",
    "heuristic_distribution_moments",
    "wavepacket_dwell_moments",
    "wavepacket_squared_mean",
    "moment_grid",
]

Branch = Literal["plus", "minus"]
BRANCHES: tuple[Branch, Branch] = ("plus", "minus")
SCAN_POINTS = 4096
SLOPE_FLOOR = 1e-8
WINDOW_TAIL = 1e-14


def _positive_k(k):
    k = np.asarray(k, dtype=float)
    if np.any(~(k > 0)):
        raise ValueError("k must be strictly positive")
    return k


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


def _sign(branch: Branch) -> float:
    if branch == "plus":
        return 1.0
    if branch == "minus":
        return -1.0
    raise ValueError(f"unknown branch {branch!r}")


def branch_time(k, branch: Branch, region: Region, units: UnitSystem = UnitSystem()):
    """t_branch(k) = (m / hbar) [L / k pm sin(kL) / k^2]."""
    k = _positive_k(k)
    L = region.width
    return _out(units.mass / units.hbar * (L / k + _sign(branch) * np.sin(k * L) / k**2))


def branch_slope(k, branch: Branch, region: Region, units: UnitSystem = UnitSystem()):
    """d t_branch / dk."""
    k = _positive_k(k)
    L = region.width
    kl = k * L
    osc = L * np.cos(kl) / k**2 - 2 * np.sin(kl) / k**3
    return _out(units.mass / units.hbar * (-L / k**2 + _sign(branch) * osc))


def dwell_eigenvalues(k, region: Region, units: UnitSystem = UnitSystem()):
    """(t_minus, t_plus) of the on-shell dwell matrix at momentum k."""
    return branch_time(k, "minus", region, units), branch_time(k, "plus", region, units)


@dataclass(frozen=True)
class OnShellDwell:
    k: float
    t_plus: float
    t_minus: float
    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        tp, tm = self.t_plus, self.t_minus
        for n, m in ((1, self.m1), (2, self.m2), (3, self.m3)):
            ref = 0.5 * (tp**n + tm**n)
            if not math.isclose(m, ref, rel_tol=1e-11, abs_tol=0.0):
                raise AssertionError(f"moment {n} inconsistent with eigenvalues: {m} vs {ref}")
        if self.m2 < self.m1**2 * (1 - 1e-14) or min(tp, tm) < 0:
            raise AssertionError("on-shell dwell data violate positivity")

    @property
    def degenerate(self) -> bool:
        return abs(self.t_plus - self.t_minus) <= 1e-12 * self.m1


def onshell_power(k, n: int, region: Region, units: UnitSystem = UnitSystem()):
    """(T^n)_kk in closed form for n = 1, 2, 3 (vectorised in k)."""
    k = _positive_k(k)
    L = region.width
    m1 = units.mass * L / (units.hbar * k)
    s2 = (np.sin(k * L) / (k * L)) ** 2
    if n == 1:
        return _out(m1)
    if n == 2:
        return _out(m1**2 * (1 + s2))
    if n == 3:
        return _out(m1**3 * (1 + 3 * s2))
    raise ValueError("n must be 1, 2 or 3")


def onshell_moments(k: float, region: Region, units: UnitSystem = UnitSystem()) -> OnShellDwell:
    """First three on-shell moments of the dwell time; invariants are asserted."""
    k = float(_positive_k(k))
    tm, tp = dwell_eigenvalues(k, region, units)
    return OnShellDwell(
        k=k,
        t_plus=tp,
        t_minus=tm,
        m1=onshell_power(k, 1, region, units),
        m2=onshell_power(k, 2, region, units),
        m3=onshell_power(k, 3, region, units),
    )


def pm_third_moment(k, region: Region, units: UnitSystem = UnitSystem()):
    """Third tau-moment of the microcanonical flux-flux correlation function.

    (m L / hbar k)^3 [1 - 3 (1 + cos^2 kL) / (kL)^2 + 3 sin(2kL) / (kL)^3].
    It differs from (T^3)_kk and approaches it only as 1/(kL)^2 -> 0.
    """
    k = _positive_k(k)
    L = region.width
    kl = k * L
    m1 = units.mass * L / (units.hbar * k)
    return _out(m1**3 * (1 - 3 * (1 + np.cos(kl) ** 2) / kl**2 + 3 * np.sin(2 * kl) / kl**3))


# --------------------------------------------------------------------------
# Roots of t_branch(k) = tau and the distribution Pi(tau)


@dataclass(frozen=True)
class BranchRoot:
    branch: Branch
    k_root: float
    slope: float
    tangent: bool = False  # root found at a critical point of t_branch


def effective_window(psi: MomentumAmplitude, tail: float = WINDOW_TAIL, n_panels: int = 400):
    """Support descriptor with the lower edge raised until the probability below it is < tail.

    Amplitudes vanishing at k = 0 have t_pm -> infinity there; the raised edge
    keeps tau-ranges finite while dropping at most ``tail`` of the norm.
    """
    k, w = psi.k_grid(n_panels)
    cum = np.cumsum(w * np.abs(psi(k)) ** 2)
    i = int(np.searchsorted(cum, tail))
    lo = max(psi.k_min, float(k[max(i - 1, 0)]))
    return (max(lo, 1e-12 * psi.k_max), psi.k_max)


def _scan_grid(window, region: Region, scan_points: int):
    lo, hi = map(float, window)
    if not (0 < lo < hi):
        raise ValueError("k_window must satisfy 0 < k_lo < k_hi")
    step = (hi - lo) / (scan_points - 1)
    if step >= math.pi / (8 * region.width):
        raise ValueError(
            f"scan step {step:.3g} does not resolve the oscillation scale pi/L; "
            f"use more than {scan_points} scan points or a narrower window"
        )
    return np.linspace(lo, hi, scan_points)


@functools.lru_cache(maxsize=64)
def _critical_points(branch: Branch, window: tuple[float, float], L: float):
    """Zeros of d t_branch / dk inside the window (sorted).

    With u = kL/2 the derivative factorises,
        t_plus'  ~ -sin u (u sin u + cos u),
        t_minus' ~ -cos u (u cos u - sin u),
    so the zeros are u = n pi (plus) or u = n pi + pi/2 (minus), together
    with exactly one root of the second factor in (n pi - pi/2, n pi) for
    plus and in (n pi, n pi + pi/2) for minus. The two zeros of a pair
    approach each other like 2/u, far below any practical scan resolution.
    """
    lo, hi = window
    u_lo, u_hi = 0.5 * lo * L, 0.5 * hi * L
    n = np.arange(1, int(u_hi / math.pi) + 2, dtype=float)
    if branch == "plus":
        exact = n * math.pi
        a, b = n * math.pi - 0.5 * math.pi, n * math.pi

        def h(u):
            return u * np.sin(u) + np.cos(u)

    else:
        exact = np.concatenate([[0.5 * math.pi], n * math.pi + 0.5 * math.pi])
        a, b = n * math.pi, n * math.pi + 0.5 * math.pi

        def h(u):
            return u * np.cos(u) - np.sin(u)

    ha = h(a)
    for _ in range(100):
        m = 0.5 * (a + b)
        hm = h(m)
        left = np.sign(hm) == np.sign(ha)
        a, ha = np.where(left, m, a), np.where(left, hm, ha)
        b = np.where(left, b, m)
    u = np.concatenate([exact, 0.5 * (a + b)])
    u = np.sort(u[(u > u_lo) & (u < u_hi)])
    return tuple(2 * u / L)


def find_branch_roots(
    tau: float,
    region: Region,
    units: UnitSystem = UnitSystem(),
    k_window: tuple[float, float] = (0.05, 7.0),
    scan_points: int = SCAN_POINTS,
) -> list[BranchRoot]:
    """All k in ``k_window`` with t_plus(k) = tau or t_minus(k) = tau, sorted by k.

    Simple roots come from sign changes of F = t - tau on a ``scan_points`` grid.
    Tangential roots (tau equal to a local extremum of a branch, e.g. at the
    degeneracy points sin kL = 0) are picked up from the branch's critical
    points. Roots outside the window are not enumerated.
    """
    tau = float(tau)
    if not tau > 0:
        raise ValueError("tau must be positive")
    grid = _scan_grid(k_window, region, scan_points)
    tol = 1e-12 * tau
    roots: list[BranchRoot] = []
    for br in BRANCHES:

        def F(k, br=br):
            return np.asarray(branch_time(k, br, region, units)) - tau

        def dF(k, br=br):
            return np.asarray(branch_slope(k, br, region, units))

        simple = bracket_and_refine(F, k_window, scan_points, fprime=dF, grid=grid)
        for k in simple:
            if abs(F(k)) > tol:
                raise ArithmeticError(f"root refinement failed at k={k}: |F|={abs(F(k)):.3g}")
            roots.append(BranchRoot(br, float(k), float(dF(k))))
        crit = _critical_points(br, tuple(map(float, k_window)), region.width)
        for k in crit:
            if abs(F(k)) <= tol and not any(abs(k - r.k_root) <= 1e-9 * k for r in roots if r.branch == br):
                roots.append(BranchRoot(br, float(k), float(dF(k)), tangent=True))
    roots.sort(key=lambda r: r.k_root)
    return roots


@dataclass(frozen=True)
class DistributionPoint:
    tau: float
    value: float
    roots: tuple[BranchRoot, ...]
    flagged: tuple[BranchRoot, ...]  # roots whose slope fell below the floor


def dwell_distribution(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    tau: float = 1.0,
    *,
    k_window: tuple[float, float] | None = None,
    slope_floor: float = SLOPE_FLOOR,
    detail: bool = False,
):
    """Pi(tau) = 1/2 sum_j sum_branch |psi~(k_j)|^2 / |t'_branch(k_j)|.

    Roots with |t'| below ``slope_floor * m / hbar`` (the integrable
    divergences where a branch is stationary) contribute with the slope
    replaced by the floor and are reported in ``flagged`` when ``detail``.
    """
    tau = float(tau)
    if not tau > 0:
        raise ValueError("tau must be positive")
    window = k_window or effective_window(psi)
    floor = slope_floor * units.mass / units.hbar
    roots = find_branch_roots(tau, region, units, window)
    total = 0.0
    flagged = []
    for r in roots:
        s = abs(r.slope)
        if s < floor:
            flagged.append(r)
            s = floor
        total += abs(psi(r.k_root)) ** 2 / s
    value = 0.5 * total
    if detail:
        return DistributionPoint(tau, value, tuple(roots), tuple(flagged))
    return value


class _MonotonePieces:
    """Branches cut at their critical points into monotone pieces on a window.

    Inverting each piece gives Pi(tau) at many tau without scanning; the
    critical values are exactly the tau where Pi has inverse-square-root
    singularities, so they serve as quadrature breakpoints.
    """

    def __init__(self, region: Region, units: UnitSystem, window):
        self.region, self.units = region, units
        lo, hi = map(float, window)
        rows = []
        for br in BRANCHES:
            crit = _critical_points(br, (lo, hi), region.width)
            edges = np.concatenate([[lo], crit, [hi]])
            for a, b in zip(edges[:-1], edges[1:]):
                if b > a:
                    rows.append((_sign(br), a, b))
        rows = np.array(rows)
        self.sign, self.ka, self.kb = rows[:, 0], rows[:, 1], rows[:, 2]
        self.ta = self._time(self.ka, self.sign)
        self.tb = self._time(self.kb, self.sign)
        self.tmin = np.minimum(self.ta, self.tb)
        self.tmax = np.maximum(self.ta, self.tb)

    def _time(self, k, sign):
        L = self.region.width
        return self.units.mass / self.units.hbar * (L / k + sign * np.sin(k * L) / k**2)

    def _slope(self, k, sign):
        L = self.region.width
        osc = L * np.cos(k * L) / k**2 - 2 * np.sin(k * L) / k**3
        return self.units.mass / self.units.hbar * (-L / k**2 + sign * osc)

    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([self.tmin, self.tmax]))

    def _dt(self, kc, dk, sign):
        """t(kc + dk) - t(kc) without cancellation (sin A - sin B in product form)."""
        L = self.region.width
        k = kc + dk
        dsin = 2 * np.cos((kc + 0.5 * dk) * L) * np.sin(0.5 * dk * L)
        lin = -L * dk / (k * kc)
        osc = dsin / k**2 - np.sin(kc * L) * dk * (2 * kc + dk) / (k * k * kc * kc)
        return self.units.mass / self.units.hbar * (lin + sign * osc)

    def density_terms(self, psi, piece, a, b, s2, c2):
        """Per-root contributions 1/2 |psi~(k)|^2 / |t'(k)| at tau = a + (b - a) s2 = b - (b - a) c2.

        The root is located relative to the piece endpoint nearer in tau, with
        the offset tau - t_end formed from the interval ends, so roots next to
        a stationary point keep full relative accuracy.
        """
        sign = self.sign[piece]
        width = b - a
        use_left = s2 <= c2
        tau = np.where(use_left, a + width * s2, b - width * c2)
        near_a = np.abs(tau - self.ta[piece]) <= np.abs(tau - self.tb[piece])
        t_end = np.where(near_a, self.ta[piece], self.tb[piece])
        k_end = np.where(near_a, self.ka[piece], self.kb[piece])
        off = np.where(use_left, (a - t_end) + width * s2, (b - t_end) - width * c2)
        span = self.kb[piece] - self.ka[piece]
        # bisection on dk in [0, span] from ka or [-span, 0] from kb
        lo = np.where(near_a, 0.0, -span)
        hi = np.where(near_a, span, 0.0)
        increasing = self.tb[piece] > self.ta[piece]
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = self._dt(k_end, mid, sign) > off
            go_left = above == increasing
            hi = np.where(go_left, mid, hi)
            lo = np.where(go_left, lo, mid)
        k = k_end + 0.5 * (lo + hi)
        # offsets pointing away from the piece carry no root
        total = self.tb[piece] - self.ta[piece]
        rel = np.where(near_a, off, off + total) / total
        inside = (rel > 0) & (rel < 1)
        slope = np.abs(self._slope(k, sign))
        return np.where(inside, 0.5 * np.abs(psi(k)) ** 2 / np.where(inside & (slope > 0), slope, 1.0), 0.0)


def dwell_distribution_moments(
    psi: MomentumAmplitude,
    region: Region,
    units: UnitSystem = UnitSystem(),
    orders=(0, 1, 2),
    *,
    k_window=None,
    rel_tol: float = 1e-9,
    max_levels: int = 18,
):
    """tau-integrals of tau^n Pi(tau), one per order, as (values, est_errors).

    The tau-axis is split at every critical value of t_pm; on each interval the
    root set is fixed and tau = a + (b - a)(1 - cos theta)/2 absorbs the
    endpoint inverse-square-root singularities. Panels in theta are bisected
    adaptively (16- vs 8-point Gauss-Legendre), which also copes with critical
    values lying just outside an interval. All panels of one bisection level
    are evaluated together. ``est_errors`` sums the 16/8-point differences of
    the accepted panels.
    """
    window = k_window or effective_window(psi)
    mp = _MonotonePieces(region, units, window)
    bps = mp.breakpoints()
    orders = np.asarray(tuple(orders))
    mids = 0.5 * (bps[:-1] + bps[1:])
    cover = (mp.tmin[None, :] < mids[:, None]) & (mp.tmax[None, :] > mids[:, None])
    iv_idx, piece_idx = np.nonzero(cover)  # (interval, piece) pairs, grouped by interval
    counts = np.bincount(iv_idx, minlength=mids.size)
    starts = np.concatenate([[0], np.cumsum(counts)])
    keep = counts > 0

    x16, w16 = np.polynomial.legendre.leggauss(16)
    x8, w8 = np.polynomial.legendre.leggauss(8)
    xs = np.concatenate([x16, x8])
    ws = np.concatenate([w16, -w8])  # fine minus coarse comes out of one sum
    ws_fine = np.concatenate([w16, np.zeros(8)])
    scale = np.maximum(bps[-1], 1.0) ** orders

    iv = np.nonzero(keep)[0]
    t0 = np.zeros(iv.size)
    t1 = np.full(iv.size, math.pi)
    values = np.zeros(orders.size)
    errors = np.zeros(orders.size)
    for _level in range(max_levels):
        if iv.size == 0:
            break
        # expand panels to (panel, piece) pairs
        reps = counts[iv]
        pan = np.repeat(np.arange(iv.size), reps)
        offs = np.arange(pan.size) - np.repeat(np.cumsum(reps) - reps, reps)
        pieces = piece_idx[starts[iv][pan] + offs]
        a, b = bps[iv][pan], bps[iv + 1][pan]
        th = t0[pan, None] + 0.5 * (t1 - t0)[pan, None] * (xs[None, :] + 1)
        s2 = np.sin(0.5 * th) ** 2
        c2 = np.sin(0.5 * (math.pi - th)) ** 2
        tau = a[:, None] + (b - a)[:, None] * s2
        jac = 0.5 * (b - a)[:, None] * np.sin(th) * 0.5 * (t1 - t0)[pan, None]
        dens = mp.density_terms(psi, pieces[:, None], a[:, None], b[:, None], s2, c2) * jac
        fine = np.zeros((iv.size, orders.size))
        diff = np.zeros((iv.size, orders.size))
        for j, n in enumerate(orders):
            g = dens * tau**n
            fine[:, j] = np.bincount(pan, weights=g @ ws_fine, minlength=iv.size)
            diff[:, j] = np.abs(np.bincount(pan, weights=g @ ws, minlength=iv.size))
        width = (t1 - t0) / math.pi
        # near stationary points the inversion t(k) = tau carries rounding noise
        # of relative size ~ eps / (tau - a); the depth cap keeps panels above it
        tol = np.maximum(rel_tol * np.abs(fine), 1e-3 * rel_tol * scale[None, :] * width[:, None])
        ok = np.all(diff <= tol, axis=1)
        if _level == max_levels - 1:
            ok[:] = True
        values += np.array([math.fsum(c) for c in fine[ok].T])
        errors += diff[ok].sum(axis=0)
        split = ~ok
        tm = 0.5 * (t0 + t1)
        iv = np.repeat(iv[split], 2)
        t0, t1 = (
            np.column_stack([t0[split], tm[split]]).ravel(),
            np.column_stack([tm[split], t1[split]]).ravel(),
        )
    return values, errors


def heuristic_distribution(psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem(), tau=1.0):
    """pi(tau) = (m L / hbar tau^2) |psi~(m L / hbar tau)|^2."""
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ValueError("tau must be positive")
    c = units.mass * region.width / units.hbar
    return _out(c / tau**2 * np.abs(psi(c / tau)) ** 2)


def heuristic_distribution_moments(
    psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem(), orders=(0, 1, 2), *, k_window=None
):
    """tau-integrals of tau^n pi(tau) over the image of the k-window, as (values, errors)."""
    lo, hi = k_window or effective_window(psi)
    c = units.mass * region.width / units.hbar
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-11, max_subdivisions=4000)
    vals, errs = [], []
    for n in orders:
        v, e = integrate(lambda t, n=n: t**n * heuristic_distribution(psi, region, units, t), c / hi, c / lo, spec)
        vals.append(v)
        errs.append(e)
    return np.array(vals), np.array(errs)


def wavepacket_dwell_moments(psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem(), n: int = 1):
    """int |psi~(k)|^2 (T^n)_kk dk by adaptive quadrature over the support."""
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    lo, hi = effective_window(psi)
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12, max_subdivisions=4000)

    def f(k):
        return np.abs(psi(k)) ** 2 * onshell_power(k, n, region, units)

    value, _ = integrate(f, lo, hi, spec, period=math.pi / region.width)
    return value


def wavepacket_squared_mean(psi: MomentumAmplitude, region: Region, units: UnitSystem = UnitSystem()):
    """int |psi~|^2 (T_kk)^2 dk, the second moment of the heuristic distribution."""
    lo, hi = effective_window(psi)
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12, max_subdivisions=4000)
    value, _ = integrate(lambda k: np.abs(psi(k)) ** 2 * onshell_power(k, 1, region, units) ** 2, lo, hi, spec)
    return value


def moment_grid(k, region: Region, units: UnitSystem = UnitSystem()) -> dict[str, np.ndarray]:
    """Columns of the on-shell moment table: T, T^2, T^3, PM third moment, T^2 of T."""
    k = np.atleast_1d(_positive_k(k))
    t1 = onshell_power(k, 1, region, units)
    kl = k * region.width
    return {
        "k": k,
        "T_kk": np.atleast_1d(t1),
        "T2_kk": np.atleast_1d(onshell_power(k, 2, region, units)),
        "T3_kk": np.atleast_1d(onshell_power(k, 3, region, units)),
        "pm_third": np.atleast_1d(pm_third_moment(k, region, units)),
        "Tkk_squared": np.atleast_1d(t1) ** 2,
        "degenerate": np.abs(np.sin(kl)) <= 1e-12 * np.maximum(1.0, kl),
    }

