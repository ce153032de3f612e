"""Special functions and generic numeric kernels.

The log-Gamma, incomplete-gamma and Bessel-K evaluations are thin, domain
checked wrappers around :mod:`scipy.special`, except that the log-scaled
Bessel function falls back to asymptotic expansions where the direct
evaluation overflows.  Quadrature is a self-contained adaptive
Gauss-Kronrod scheme so that it can serve as an independent oracle for
everything built on the special functions.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import DomainError, InputError, NumericalError, QuadratureError

__all__ = [
    "QuadratureSpec",
    "ln_gamma",
    "bessel_k",
    "log_bessel_k",
    "regularized_lower_gamma",
    "integrate",
    "find_root",
    "solve_increasing",
]


@dataclass(frozen=True)
class QuadratureSpec:
    absolute_tolerance: float = 1e-10
    relative_tolerance: float = 1e-9
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.absolute_tolerance > 0 and self.relative_tolerance > 0):
            raise InputError("quadrature tolerances must be strictly positive")
        if int(self.max_subdivisions) < 1:
            raise InputError("max_subdivisions must be >= 1")


def _as_float_array(x):
    return np.asarray(x, dtype=float)


def _scalar_or_array(out, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(out)
    return out


# --------------------------------------------------------------------------
# Gamma family


def ln_gamma(x):
    """Natural log of the Gamma function for positive arguments."""
    xa = _as_float_array(x)
    if not np.all(np.isfinite(xa)) or np.any(xa <= 0):
        raise DomainError("ln_gamma requires finite x > 0")
    return _scalar_or_array(special.gammaln(xa), x)


def regularized_lower_gamma(s, x):
    """P(s, x) = gamma(s, x) / Gamma(s)."""
    sa = _as_float_array(s)
    xa = _as_float_array(x)
    if not np.all(np.isfinite(sa)) or np.any(sa <= 0):
        raise DomainError("regularized_lower_gamma requires finite s > 0")
    if np.any(np.isnan(xa)) or np.any(xa < 0):
        raise DomainError("regularized_lower_gamma requires x >= 0")
    return _scalar_or_array(special.gammainc(sa, xa), s, x)


# --------------------------------------------------------------------------
# Modified Bessel function of the second kind

# Debye polynomials u_k(p), coefficients in ascending powers of p.
_DEBYE = (
    np.array([1.0]),
    np.array([0.0, 3.0, 0.0, -5.0]) / 24.0,
    np.array([0.0, 0.0, 81.0, 0.0, -462.0, 0.0, 385.0]) / 1152.0,
    np.array([0.0, 0.0, 0.0, 30375.0, 0.0, -369603.0, 0.0, 765765.0, 0.0, -425425.0]) / 414720.0,
    np.array([0.0, 0.0, 0.0, 0.0, 4465125.0, 0.0, -94121676.0, 0.0, 349922430.0, 0.0,
              -446185740.0, 0.0, 185910725.0]) / 39813120.0,
)


def _log_k_debye(nu, x):
    # Uniform asymptotic expansion of K_nu(nu z) for large nu.
    z = x / nu
    root = np.sqrt(1.0 + z * z)
    eta = root + np.log(z / (1.0 + root))
    p = 1.0 / root
    series = np.zeros_like(z)
    for k, coeffs in enumerate(_DEBYE):
        term = np.polynomial.polynomial.polyval(p, coeffs) / nu**k
        series = series + (-1.0) ** k * term
    return (0.5 * np.log(np.pi / (2.0 * nu)) - nu * eta
            - 0.25 * np.log1p(z * z) + np.log(series))


def _log_k_small_x(nu, x):
    # Leading small-argument behaviour, K_nu(x) ~ Gamma(nu)/2 (2/x)^nu, nu > 1.
    return (special.gammaln(nu) - math.log(2.0) + nu * np.log(2.0 / x)
            + np.log1p(x * x / (4.0 * (1.0 - nu))))


def _log_k_large_x(nu, x):
    # Hankel expansion, x >> nu^2.
    mu = 4.0 * nu * nu
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 6):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        total = total + term
    return 0.5 * np.log(np.pi / (2.0 * x)) - x + np.log(total)


def log_bessel_k(nu, x):
    """ln K_nu(x), finite wherever K_nu(x) is positive even if it over/underflows."""
    nu_a = np.abs(_as_float_array(nu))
    xa = _as_float_array(x)
    if not np.all(np.isfinite(nu_a)):
        raise DomainError("bessel order must be finite")
    if np.any(np.isnan(xa)) or np.any(xa <= 0):
        raise DomainError("bessel_k requires x > 0")
    nu_b, x_b = np.broadcast_arrays(nu_a, xa)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        scaled = special.kve(nu_b, x_b)
        out = np.log(scaled) - x_b
        bad = ~np.isfinite(out) | (scaled <= 0)
        if np.any(bad):
            nb = nu_b[bad]
            xb = x_b[bad]
            tiny_x = xb * xb < 1e-6 * np.maximum(nb - 1.0, 1e-300)
            fix = np.empty_like(xb)
            small = tiny_x & (nb > 1.0)
            fix[small] = _log_k_small_x(nb[small], xb[small])
            large = ~small & (xb > 1e3 * (nb * nb + 1.0))
            fix[large] = _log_k_large_x(nb[large], xb[large])
            rest = ~(small | large)
            fix[rest] = _log_k_debye(np.maximum(nb[rest], 1e-300), xb[rest])
            out = np.array(out, copy=True)
            out[bad] = fix
    if np.any(~np.isfinite(out)):
        raise NumericalError("log_bessel_k could not be evaluated")
    return _scalar_or_array(out, nu, x)


def bessel_k(nu, x):
    """K_nu(x) for real order and x > 0.

    Returns 0 where the value underflows and ``inf`` where it exceeds the
    double range; use :func:`log_bessel_k` in the log domain.
    """
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(_as_float_array(log_bessel_k(nu, x)))
    return _scalar_or_array(out, nu, x)


# --------------------------------------------------------------------------
# Adaptive Gauss-Kronrod (7, 15) quadrature

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS = np.zeros(15)
_GAUSS[1:15:2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(g, a, b):
    half = 0.5 * (b - a)
    center = 0.5 * (a + b)
    values = np.asarray(g(center + half * _NODES), dtype=float)
    if values.shape != _NODES.shape:
        values = np.broadcast_to(values, _NODES.shape)
    if not np.all(np.isfinite(values)):
        raise QuadratureError("integrand is not finite on the interval", math.nan, math.inf)
    kronrod = half * float(values @ _KRONROD)
    gauss = half * float(values @ _GAUSS)
    return kronrod, abs(kronrod - gauss)


def _segment_integrand(f, a, b):
    """Map one segment onto a finite interval; return (g, lo, hi)."""
    if math.isfinite(a) and math.isfinite(b):
        return f, a, b
    if math.isfinite(a):
        def g(t):
            return f(a + t / (1.0 - t)) / (1.0 - t) ** 2
        return g, 0.0, 1.0
    if math.isfinite(b):
        def g(t):
            return f(b - (1.0 - t) / t) / t**2
        return g, 0.0, 1.0
    raise InputError("integrate: split doubly infinite ranges with a breakpoint")


def integrate(f: Callable, lower: float, upper: float,
              spec: QuadratureSpec | None = None, points=()) -> float:
    """Integrate ``f`` over [lower, upper]; ``upper`` (or ``lower``) may be infinite.

    ``f`` is called with numpy arrays of abscissae.  Optional ``points`` are
    interior breakpoints where the integrand is non-smooth or sharply peaked.
    Semi-infinite ranges use the substitution x = a + t/(1-t).
    """
    spec = spec or QuadratureSpec()
    lower = float(lower)
    upper = float(upper)
    if math.isnan(lower) or math.isnan(upper):
        raise InputError("integration limits must not be NaN")
    if lower == upper:
        return 0.0
    if lower > upper:
        return -integrate(f, upper, lower, spec, points)
    cuts = sorted(float(p) for p in points if lower < float(p) < upper)
    if math.isinf(lower) and math.isinf(upper) and not cuts:
        cuts = [0.0]
    bounds = [lower, *cuts, upper]

    heap = []
    total = 0.0
    error = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        g, lo, hi = _segment_integrand(f, a, b)
        value, err = _gk15(g, lo, hi)
        total += value
        error += err
        heapq.heappush(heap, (-err, lo, hi, value, id(g), g))

    subdivisions = 0
    while error > max(spec.absolute_tolerance, spec.relative_tolerance * abs(total)):
        if subdivisions >= spec.max_subdivisions:
            raise QuadratureError("integrate did not converge", total, error)
        neg_err, lo, hi, value, key, g = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise QuadratureError("interval cannot be subdivided further", total, error)
        left, left_err = _gk15(g, lo, mid)
        right, right_err = _gk15(g, mid, hi)
        total += left + right - value
        error += left_err + right_err + neg_err
        heapq.heappush(heap, (-left_err, lo, mid, left, key, g))
        heapq.heappush(heap, (-right_err, mid, hi, right, key, g))
        subdivisions += 1
    return total


# --------------------------------------------------------------------------
# Root finding


def find_root(f: Callable[[float], float], bracket, tolerance: float = 1e-12) -> float:
    """Root of a continuous scalar function inside a sign-changing bracket (Brent)."""
    lo, hi = (float(v) for v in bracket)
    if not lo < hi:
        raise InputError("bracket must satisfy low < high")
    if not tolerance > 0:
        raise InputError("tolerance must be positive")
    f_lo = f(lo)
    if f_lo == 0:
        return lo
    f_hi = f(hi)
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise DomainError(f"invalid bracket: f({lo})={f_lo} and f({hi})={f_hi} have the same sign")
    return float(optimize.brentq(f, lo, hi, xtol=tolerance, rtol=4 * np.finfo(float).eps,
                                 maxiter=500))


def solve_increasing(func, deriv, targets, lo, hi, x0=None, iterations=200, tol=1e-15):
    """Vectorised safeguarded Newton for ``func(x) = targets`` with ``func`` increasing.

    ``lo``/``hi`` bracket every root.  Newton steps that leave the current
    bracket are replaced by bisection, so convergence is guaranteed.
    ``func`` and ``deriv`` act elementwise on 1-D arrays.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    lo = np.broadcast_to(np.asarray(lo, dtype=float), targets.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), targets.shape).copy()
    if x0 is None:
        x = 0.5 * (lo + hi)
    else:
        x = np.clip(np.broadcast_to(np.asarray(x0, dtype=float), targets.shape), lo, hi)
    active = np.arange(targets.size)
    for _ in range(iterations):
        xs = x[active]
        resid = func(xs) - targets[active]
        slope = deriv(xs)
        lo_s = np.where(resid < 0, xs, lo[active])
        hi_s = np.where(resid > 0, xs, hi[active])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = xs - resid / slope
        ok = np.isfinite(newton) & (newton > lo_s) & (newton < hi_s)
        new = np.where(ok, newton, 0.5 * (lo_s + hi_s))
        new = np.where(resid == 0, xs, new)
        scale = tol * np.maximum(1.0, np.abs(xs))
        done = (resid == 0) | (np.abs(new - xs) <= scale) | (hi_s - lo_s <= scale)
        x[active] = new
        lo[active] = lo_s
        hi[active] = hi_s
        active = active[~done]
        if active.size == 0:
            return x
    raise NumericalError("solve_increasing did not converge")
