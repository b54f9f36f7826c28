"""Shared numerical machinery.

Adaptive Gauss-Kronrod quadrature (vectorised integrands, forced breakpoints,
semi-infinite ranges), composite Gauss-Legendre grids for oscillatory
integrands, sign-change root bracketing with bisection/Newton polish,
Richardson extrapolation and finite-difference derivative oracles.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "QuadratureSpec",
    "integrate",
    "gauss_legendre_panels",
    "bracket_and_refine",
    "ExtrapolationLadder",
    "richardson",
    "derivative",
]


class IntegrationError(RuntimeError):
    """Adaptive quadrature ran out of subdivisions.

    The partial value and its (honest) error estimate are kept on the
    exception so callers can decide whether to accept them.
    """

    def __init__(self, message: str, value: float, error: float):
        super().__init__(message)
        self.value = value
        self.error = error


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 2000
    singular_points: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 64:
            raise ValueError("max_subdivisions must be at least 64")
        object.__setattr__(self, "singular_points", tuple(float(p) for p in self.singular_points))


# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
_GW[1:14:2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15_batch(f, lo: np.ndarray, hi: np.ndarray):
    """Apply the 15-point rule to many intervals with one call of ``f``."""
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = centre[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    kron = half * (fx @ _KW)
    gauss = half * (fx @ _GW)
    # QUADPACK error heuristic
    mean = kron / np.where(half != 0, 2 * half, 1.0)
    resasc = np.abs(half) * (np.abs(fx - mean[:, None]) @ _KW)
    resabs = np.abs(half) * (np.abs(fx) @ _KW)
    err = np.abs(kron - gauss)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(
            (resasc != 0) & (err != 0),
            resasc * np.minimum(1.0, (200 * err / np.where(resasc != 0, resasc, 1.0)) ** 1.5),
            err,
        )
    eps = np.finfo(float).eps
    floor = np.where(resabs > np.finfo(float).tiny / (50 * eps), 50 * eps * resabs, 0.0)
    err = np.maximum(scaled, floor)
    bad = ~np.isfinite(kron)
    if bad.any():
        raise FloatingPointError("integrand returned non-finite values")
    return kron, err


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    spec: QuadratureSpec | None = None,
    *,
    period: float | None = None,
    nodes_per_period: int = 8,
) -> tuple[float, float]:
    """Globally adaptive Gauss-Kronrod quadrature of ``f`` over ``[a, b]``.

    ``f`` must accept a 1-D array of abscissae and return values of the same
    shape. ``b`` may be ``np.inf``; the range is then mapped onto ``[0, 1)``
    with ``x = a + u / (1 - u)``. Points listed in ``spec.singular_points``
    become forced subdivision boundaries. ``period`` is an oscillation hint:
    the initial partition then puts at least ``nodes_per_period`` nodes into
    each period.

    Returns ``(value, est_error)``. Raises :class:`IntegrationError` carrying
    the partial result when ``spec.max_subdivisions`` is exhausted.
    """
    spec = spec or QuadratureSpec()
    if not b > a:
        raise ValueError(f"need a < b, got a={a}, b={b}")

    if math.isinf(b):
        a0 = float(a)

        def g(u):
            one_minus = 1.0 - u
            return f(a0 + u / one_minus) / one_minus**2

        breaks = [0.0]
        breaks += sorted(
            (p - a0) / (1.0 + p - a0) for p in spec.singular_points if a0 < p < math.inf
        )
        breaks.append(1.0)
        func, period_eff = g, None
    else:
        breaks = [float(a)]
        breaks += sorted(p for p in spec.singular_points if a < p < b)
        breaks.append(float(b))
        func, period_eff = f, period

    edges = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= lo:
            continue
        n = 1
        if period_eff:
            n = max(1, math.ceil((hi - lo) / period_eff * nodes_per_period / 15))
        edges.extend(np.linspace(lo, hi, n + 1)[:-1].tolist())
    edges.append(breaks[-1])
    lo = np.array(edges[:-1])
    hi = np.array(edges[1:])

    vals, errs = _gk15_batch(func, lo, hi)
    # heap of (-err, counter, lo, hi, val); counter keeps the order deterministic
    heap = [(-e, i, l, h, v) for i, (l, h, v, e) in enumerate(zip(lo, hi, vals, errs))]
    heapq.heapify(heap)
    counter = len(heap)
    total = math.fsum(vals)
    total_err = math.fsum(errs)
    n_sub = len(heap)

    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if n_sub >= spec.max_subdivisions:
            raise IntegrationError(
                f"max_subdivisions={spec.max_subdivisions} exhausted "
                f"(value={total:.16g}, est_error={total_err:.3g})",
                total,
                total_err,
            )
        # bisect the worst few intervals in one vectorised call
        batch = [heapq.heappop(heap) for _ in range(min(len(heap), 8))]
        blo = np.array([it[2] for it in batch])
        bhi = np.array([it[3] for it in batch])
        mid = 0.5 * (blo + bhi)
        if np.any((mid <= blo) | (mid >= bhi)):
            raise IntegrationError(
                "interval can no longer be bisected in floating point", total, total_err
            )
        new_lo = np.concatenate([blo, mid])
        new_hi = np.concatenate([mid, bhi])
        nv, ne = _gk15_batch(func, new_lo, new_hi)
        for l, h, v, e in zip(new_lo, new_hi, nv, ne):
            heapq.heappush(heap, (-e, counter, l, h, v))
            counter += 1
        n_sub += len(batch)
        # recompute sums from scratch with fsum for determinism
        total = math.fsum(it[4] for it in heap)
        total_err = math.fsum(-it[0] for it in heap)

    return float(total), float(total_err)


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order: int):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def gauss_legendre_panels(
    a: float, b: float, n_panels: int, order: int = 16, *, edges: Sequence[float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a composite Gauss-Legendre rule on ``[a, b]``.

    Uses ``n_panels`` equal panels unless explicit panel ``edges`` are given.
    """
    x, w = _gl(order)
    if edges is None:
        e = np.linspace(a, b, max(1, int(n_panels)) + 1)
    else:
        e = np.asarray(edges, dtype=float)
    half = 0.5 * np.diff(e)
    centre = 0.5 * (e[:-1] + e[1:])
    nodes = (centre[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def bracket_and_refine(
    f: Callable[[np.ndarray], np.ndarray],
    window: tuple[float, float],
    scan_points: int,
    *,
    fprime: Callable[[np.ndarray], np.ndarray] | None = None,
    xtol_rel: float = 1e-12,
    grid: np.ndarray | None = None,
    fgrid: np.ndarray | None = None,
) -> np.ndarray:
    """All roots of ``f`` in the open ``window`` that show up as sign changes on a scan grid.

    The grid has ``scan_points`` equally spaced points (or is passed in as
    ``grid``/``fgrid`` to reuse a scan). Each bracket is bisected until its
    width is below ``xtol_rel`` relative, then polished with Newton steps when
    ``fprime`` is supplied and the step stays inside the bracket. Roots of even
    multiplicity that fall between grid points are not seen.
    """
    lo, hi = map(float, window)
    if grid is None:
        grid = np.linspace(lo, hi, int(scan_points))
    if fgrid is None:
        fgrid = np.asarray(f(grid), dtype=float)
    exact = grid[(fgrid == 0.0) & (grid > lo) & (grid < hi)]
    s = np.sign(fgrid)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if idx.size == 0:
        return np.sort(exact)

    a = grid[idx].copy()
    b = grid[idx + 1].copy()
    fa = fgrid[idx].copy()
    scale = np.maximum(np.abs(a), np.abs(b))
    for _ in range(200):
        width = b - a
        if np.all(width <= xtol_rel * scale):
            break
        m = 0.5 * (a + b)
        fm = np.asarray(f(m), dtype=float)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
    roots = 0.5 * (a + b)
    if fprime is not None:
        for _ in range(3):
            d = np.asarray(fprime(roots), dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.asarray(f(roots), dtype=float) / d
            cand = roots - step
            ok = np.isfinite(cand) & (cand >= a - (b - a)) & (cand <= b + (b - a))
            roots = np.where(ok, cand, roots)
    return np.sort(np.concatenate([roots, exact]))


def _neville_at_zero(h: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Successive polynomial extrapolants to h = 0 using the first 1..n points."""
    n = len(h)
    p = list(y.astype(float))
    out = [p[0]]
    for m in range(1, n):
        p = [
            (h[i] * p[i + 1] - h[i + m] * p[i]) / (h[i] - h[i + m])
            for i in range(n - m)
        ]
        out.append(p[0])
    return np.array(out)


def richardson(ladder: "ExtrapolationLadder") -> tuple[float, float]:
    """Polynomial extrapolation of the ladder values to parameter zero.

    The error estimate is the difference between the extrapolants built from
    all rungs and from all but the last. When the raw values do not converge
    monotonically a warning is issued and the error is inflated to the full
    spread of the ladder.
    """
    h = np.asarray(ladder.params, dtype=float)
    y = np.asarray(ladder.values, dtype=float)
    ext = _neville_at_zero(h, y)
    limit = float(ext[-1])
    err = float(abs(ext[-1] - ext[-2]))
    d = np.diff(y)
    if not (np.all(d > 0) or np.all(d < 0)):
        warnings.warn("Richardson ladder is not monotone; error estimate inflated", RuntimeWarning)
        err = max(err, float(np.ptp(y)))
    return limit, err


@dataclass(frozen=True)
class ExtrapolationLadder:
    """Values of a quantity at a strictly decreasing sequence of parameters."""

    params: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.params)
        v = tuple(float(x) for x in self.values)
        if len(p) < 3:
            raise ValueError("an extrapolation ladder needs at least 3 rungs")
        if len(p) != len(v):
            raise ValueError("params and values differ in length")
        if not all(x > y > 0 for x, y in zip(p[:-1], p[1:])):
            raise ValueError("ladder parameters must be positive and strictly decreasing")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "values", v)

    @cached_property
    def _result(self):
        return richardson(self)

    @property
    def limit(self) -> float:
        return self._result[0]

    @property
    def error(self) -> float:
        return self._result[1]


def derivative(
    f: Callable[[float], complex], x: float, h: float, order: int = 1, levels: int = 3
) -> complex:
    """Finite-difference oracle: 5-point central stencil plus Richardson in ``h``.

    Only meant for checking analytic derivatives; ``order`` is 1 or 2.
    """
    if order == 1:
        stencil = lambda s: (f(x - 2 * s) - 8 * f(x - s) + 8 * f(x + s) - f(x + 2 * s)) / (12 * s)
    elif order == 2:
        stencil = lambda s: (
            -f(x - 2 * s) + 16 * f(x - s) - 30 * f(x) + 16 * f(x + s) - f(x + 2 * s)
        ) / (12 * s * s)
    else:
        raise ValueError("order must be 1 or 2")
    table = [stencil(h / 2**i) for i in range(levels)]
    # the 5-point stencils have leading error h^4, then h^6, ...
    p = 4
    while len(table) > 1:
        r = 2.0**p
        table = [(r * table[i + 1] - table[i]) / (r - 1) for i in range(len(table) - 1)]
        p += 2
    return table[0]
