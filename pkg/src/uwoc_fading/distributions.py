"""The seven unit-mean fading distributions.

Every family is reached through one immutable :class:`FadingModel` carrying a
family tag, the family's parameter record and a ``normalized`` flag.  Density,
CDF, quantile, moments and scintillation index are evaluated through the same
methods regardless of family; the constraint algebra that ties one parameter
to the others under E[h] = 1 lives in the per-family implementation classes.

Densities are evaluated in the log domain throughout so that large shape
parameters (hundreds to millions) do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Mapping

import numpy as np
from scipy import special

from .errors import (ConstraintError, DomainError, InfeasibleError, InputError,
                     NumericalError, ParameterCapError)
from .numerics import find_root, log_bessel_k, solve_increasing

__all__ = [
    "Family",
    "LognormalParams",
    "GammaParams",
    "KDistParams",
    "WeibullParams",
    "ExpWeibullParams",
    "GammaGammaParams",
    "GenGammaParams",
    "FadingModel",
    "normalize",
    "from_scintillation_index",
    "g_series",
    "g_converged",
    "PARAM_CAP",
    "GAMMA_GAMMA_PRODUCT_CAP",
    "SEARCH_BOUNDS",
    "FREE_PARAMETERS",
]

#: Hard range for every free (searchable) parameter.
PARAM_CAP = (1e-6, 1e6)

#: Gamma-Gamma is limited to alpha*beta <= 350**2, i.e. a Bessel argument
#: 2*sqrt(alpha*beta*h) of at most 700 at the unit mean, the largest value
#: for which K itself (not its logarithm) stays inside double range.
GAMMA_GAMMA_PRODUCT_CAP = 350.0**2

NORMALIZATION_TOLERANCE = 1e-9


class Family(str, Enum):
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"
    K_DIST = "k_dist"
    WEIBULL = "weibull"
    EXP_WEIBULL = "exp_weibull"
    GAMMA_GAMMA = "gamma_gamma"
    GEN_GAMMA = "gen_gamma"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"k": "k_dist", "kdist": "k_dist", "expweibull": "exp_weibull",
                   "gammagamma": "gamma_gamma", "gengamma": "gen_gamma",
                   "generalized_gamma": "gen_gamma", "log_normal": "lognormal"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise InputError(f"unknown distribution family {value!r}") from None

    @property
    def order(self) -> int:
        return list(Family).index(self)


# --------------------------------------------------------------------------
# Parameter records


@dataclass(frozen=True)
class LognormalParams:
    sigma2_X: float
    mu_X: float


@dataclass(frozen=True)
class GammaParams:
    k: float
    theta: float


@dataclass(frozen=True)
class KDistParams:
    alpha: float


@dataclass(frozen=True)
class WeibullParams:
    beta: float
    eta: float


@dataclass(frozen=True)
class ExpWeibullParams:
    alpha: float
    beta: float
    eta: float


@dataclass(frozen=True)
class GammaGammaParams:
    alpha: float
    beta: float


@dataclass(frozen=True)
class GenGammaParams:
    a: float
    d: float
    p: float


FREE_PARAMETERS = {
    Family.LOGNORMAL: ("sigma2_X",),
    Family.GAMMA: ("k",),
    Family.K_DIST: ("alpha",),
    Family.WEIBULL: ("beta",),
    Family.EXP_WEIBULL: ("alpha", "beta"),
    Family.GAMMA_GAMMA: ("alpha", "beta"),
    Family.GEN_GAMMA: ("d", "p"),
}

#: Ranges searched by the fitting engine; each lies inside PARAM_CAP and is
#: narrowed where Gamma-function terms would leave double range.
SEARCH_BOUNDS = {
    Family.LOGNORMAL: {"sigma2_X": (1e-6, 2.0)},
    Family.GAMMA: {"k": (1e-2, 1e6)},
    Family.K_DIST: {"alpha": (1e-2, 1e6)},
    Family.WEIBULL: {"beta": (0.1, 1e4)},
    Family.EXP_WEIBULL: {"alpha": (1e-2, 1e3), "beta": (0.1, 1e4)},
    Family.GAMMA_GAMMA: {"alpha": (1e-2, 1e6), "beta": (1e-2, 1e6)},
    Family.GEN_GAMMA: {"d": (1e-2, 1e4), "p": (0.1, 1e3)},
}

_PARAM_TYPES = {
    Family.LOGNORMAL: LognormalParams,
    Family.GAMMA: GammaParams,
    Family.K_DIST: KDistParams,
    Family.WEIBULL: WeibullParams,
    Family.EXP_WEIBULL: ExpWeibullParams,
    Family.GAMMA_GAMMA: GammaGammaParams,
    Family.GEN_GAMMA: GenGammaParams,
}

_gammaln = special.gammaln
_LN2 = math.log(2.0)


def _check_cap(name, value):
    lo, hi = PARAM_CAP
    if not (lo <= value <= hi):
        raise ParameterCapError(f"parameter {name}={value!r} outside the supported range [{lo:g}, {hi:g}]")


def _check_positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise InputError(f"parameter {name} must be positive and finite, got {value!r}")


# --------------------------------------------------------------------------
# Exponentiated Weibull series


def g_series(n: int, alpha: float, beta: float, terms: int = 10) -> float:
    """Partial sum of the exponentiated-Weibull moment series g_n(alpha, beta).

    Gamma(alpha)/Gamma(alpha - i) is accumulated as the product
    (alpha-1)(alpha-2)...(alpha-i), so integer alpha gives exact zeros
    instead of poles.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    if int(terms) != terms or terms < 1:
        raise DomainError("terms must be a positive integer")
    s = 1.0 + n / beta
    coeff = 1.0
    total = 1.0
    for i in range(1, int(terms)):
        coeff *= -(alpha - i) / i
        if coeff == 0.0:
            break
        total += coeff / (i + 1.0) ** s
    return total


_EXACT_SERIES_MAX_ALPHA = 8


def g_converged(n: float, alpha: float, beta: float) -> float:
    """Limit of :func:`g_series` as the number of terms goes to infinity.

    Uses g_n = (1/Gamma(s)) * int_0^inf t^(s-1) e^-t (1 - e^-t)^(alpha-1) dt with
    s = 1 + n/beta, integrated by the trapezoid rule in ln t (exponentially
    convergent for this analytic, doubly decaying integrand).
    """
    if not (alpha > 0 and beta > 0 and n > 0):
        raise DomainError("g_converged requires positive n, alpha, beta")
    if alpha == int(alpha) and alpha <= _EXACT_SERIES_MAX_ALPHA and n == int(n):
        # the series terminates after alpha terms; few terms keep the
        # alternating sum free of cancellation
        return g_series(int(n), alpha, beta, terms=int(alpha))
    s = 1.0 + n / beta
    v, log_density, step = _log_max_exponential_grid(alpha, s)
    log_terms = (s - 1.0) * v + log_density - math.log(alpha) - _gammaln(s)
    peak = log_terms.max()
    return float(math.exp(peak) * step * np.exp(log_terms - peak).sum())


def _log_max_exponential_grid(alpha, s_max):
    """Trapezoid grid for L = ln Y, Y exponentiated-exponential with shape alpha.

    Returns nodes v, ln f_L(v) with f_L(v) = alpha e^v e^(-e^v) (1 - e^(-e^v))^(alpha-1),
    and the step.  The grid is wide enough for weights up to e^((s_max - 1) v).
    The step shrinks as the peak narrows with growing alpha.
    """
    v_lo = min(-5.0, -45.0 / alpha)
    v_hi = math.log(s_max + 45.0 + 12.0 * math.sqrt(s_max) + math.log1p(alpha))
    step = min(0.1, 0.5 / math.log(2.0 + alpha))
    v = np.arange(v_lo, v_hi + step, step)
    t = np.exp(v)
    with np.errstate(divide="ignore", under="ignore"):
        log_one_minus = np.where(v < -30.0, v - 0.5 * t, np.log(-np.expm1(-t)))
    return v, math.log(alpha) + v - t + (alpha - 1.0) * log_one_minus, step


def _exp_weibull_sigma2(alpha, beta):
    """Normalized variance of Y^(1/beta), Y exponentiated-exponential.

    Evaluated about the mean, E[expm1(v/beta - ln m1)^2], so that it stays
    accurate when the variance is tiny (large beta); an error in ln m1 only
    enters at second order.
    """
    t = 1.0 / beta
    v, log_density, step = _log_max_exponential_grid(alpha, 1.0 + 2.0 * t)
    peak = log_density.max()
    weights = np.exp(log_density - peak)
    log_m1 = math.log((np.exp(t * v - t * v.max()) * weights).sum() * step) + t * v.max() + peak
    with np.errstate(over="ignore"):
        central = (np.expm1(t * v - log_m1) ** 2 * weights).sum() * step
    return float(central * math.exp(peak))


_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)
_GL16_X = 0.5 * (_GL16_X + 1.0)
_GL16_W = 0.5 * _GL16_W


def _lgamma_difference(x, h):
    """lnGamma(x + h) - lnGamma(x) without cancellation.

    For h <= x it is h times the mean of the digamma function over [x, x + h]
    by 16-point Gauss-Legendre, exact to double precision for the same reason
    as in :func:`_lgamma_second_difference`.
    """
    if h <= x:
        return float(h * np.dot(_GL16_W, special.digamma(x + h * _GL16_X)))
    return _gammaln(x + h) - _gammaln(x)


def _lgamma_second_difference(x, h):
    """lnGamma(x + 2h) - 2 lnGamma(x + h) + lnGamma(x) without cancellation.

    For h <= x it is the double integral of the trigamma function over
    [0, h]^2 (tensor Gauss-Legendre; the nearest pole of trigamma is at least
    three half-widths away, so 16 nodes are exact to double precision).
    Otherwise the direct difference is already well conditioned.
    """
    if h <= x:
        nodes = x + h * (_GL16_X[:, None] + _GL16_X[None, :])
        return float(h * h * np.sum(_GL16_W[:, None] * _GL16_W[None, :] * special.polygamma(1, nodes)))
    return _gammaln(x + 2 * h) - 2 * _gammaln(x + h) + _gammaln(x)


# --------------------------------------------------------------------------
# Tabulated CDF for families without a usable closed form

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


class _LogGridCdf:
    """CDF tabulated by Gauss-Legendre panels in u = ln h.

    ``log_density_u(u)`` is the log density of ln h.  Cumulative masses are
    stored at panel boundaries; queries integrate the remaining partial panel.
    """

    def __init__(self, log_density_u, center: float, spread: float):
        self._ld = log_density_u
        spread = float(min(max(spread, 1e-4), 10.0))
        coarse = np.arange(-700.0, 60.0, 0.5)
        lc = log_density_u(coarse)
        peak_i = int(np.argmax(lc))
        peak = lc[peak_i]
        cutoff = peak - 55.0
        keep = np.nonzero(lc > cutoff)[0]
        u_lo = coarse[max(keep[0] - 1, 0)]
        u_hi = coarse[min(keep[-1] + 1, coarse.size - 1)]
        mode = coarse[peak_i]
        if center is not None and u_lo < center < u_hi and spread < 1.0:
            mode = center
        w0 = min(0.25, spread / 4.0)

        def panels(start, stop, direction, cap):
            out = [start]
            width = w0
            u = start
            while (u < stop) if direction > 0 else (u > stop):
                if abs(u - mode) > 3.0 * spread:
                    width = min(width * 1.2, cap)
                u = u + direction * width
                out.append(u)
            return out

        right = panels(mode, u_hi, +1, 1.0)
        left = panels(mode, u_lo, -1, 2.0)
        bounds = np.array(left[::-1] + right[1:])
        lo, hi = bounds[:-1], bounds[1:]
        half = 0.5 * (hi - lo)
        nodes = 0.5 * (hi + lo)[:, None] + half[:, None] * _GL_X[None, :]
        dens = np.exp(log_density_u(nodes.ravel()).reshape(nodes.shape))
        masses = half * (dens @ _GL_W)
        # mass left of the table from the local exponential decay rate
        l0 = float(log_density_u(np.array([bounds[0]]))[0])
        l1 = float(log_density_u(np.array([bounds[0] + 1e-3]))[0])
        rate = (l1 - l0) / 1e-3
        left_tail = math.exp(l0) / rate if rate > 0 else 0.0
        self._inverse = None
        self.bounds = bounds
        self.cumulative = left_tail + np.concatenate([[0.0], np.cumsum(masses)])
        self.total = float(self.cumulative[-1])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        out = np.empty_like(flat)
        below = flat <= self.bounds[0]
        above = flat >= self.bounds[-1]
        out[below] = 0.0
        out[above] = self.total
        mid = ~(below | above)
        if np.any(mid):
            um = flat[mid]
            j = np.searchsorted(self.bounds, um, side="right") - 1
            start = self.bounds[j]
            half = 0.5 * (um - start)
            nodes = (start + half)[:, None] + half[:, None] * _GL_X[None, :]
            dens = np.exp(self._ld(nodes.ravel()).reshape(nodes.shape))
            out[mid] = self.cumulative[j] + half * (dens @ _GL_W)
        return np.minimum(out, 1.0).reshape(u.shape)

    def inverse_table(self) -> "_InverseTable":
        """Quantile starting table with eight samples per panel, built on first use."""
        if self._inverse is None:
            lo, hi = self.bounds[:-1], self.bounds[1:]
            frac = np.arange(8) / 8.0
            v = (lo[:, None] + (hi - lo)[:, None] * frac[None, :]).ravel()
            v = np.append(v, self.bounds[-1])
            self._inverse = _InverseTable(self, v, self.bounds[0] - 60.0, self.bounds[-1] + 1.0)
        return self._inverse


class _InverseTable:
    """Sorted (v, F(v)) samples of a CDF in v = ln h.

    Gives each target probability a starting point by linear interpolation
    and a bracket of adjacent samples, so Newton needs only a few steps.
    The samples come from the same CDF routine the iteration uses, which
    keeps the brackets exact.
    """

    def __init__(self, cdf_v, v, v_min=-745.0, v_max=60.0):
        f = np.maximum.accumulate(np.asarray(cdf_v(v), dtype=float))
        self.v = np.concatenate([[v_min], v, [v_max]])
        self.f = np.concatenate([[0.0], f, [1.0]])

    def start(self, target):
        j = np.clip(np.searchsorted(self.f, target, side="right") - 1, 0, self.v.size - 2)
        lo, hi = self.v[j], self.v[j + 1]
        f_lo, f_hi = self.f[j], self.f[j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(f_hi > f_lo, (target - f_lo) / (f_hi - f_lo), 0.5)
        return lo, hi, lo + np.clip(frac, 0.0, 1.0) * (hi - lo)


def _lazy(cache, key, build):
    # benign race: concurrent builders produce identical tables
    value = cache.get(key)
    if value is None:
        value = build()
        cache[key] = value
    return value


# --------------------------------------------------------------------------
# Family implementations


def _positive_h(h):
    h = np.asarray(h, dtype=float)
    if np.any(np.isnan(h)) or np.any(h <= 0):
        raise DomainError("density requires h > 0")
    return h


class _FamilyImpl:
    family: Family
    n_free: int

    def validate(self, params):
        for f in fields(params):
            value = getattr(params, f.name)
            if f.name != "mu_X":
                _check_positive(f.name, value)
            elif not math.isfinite(value):
                raise InputError("mu_X must be finite")
        for name in FREE_PARAMETERS[self.family]:
            _check_cap(name, getattr(params, name))

    def setup(self, params):
        return None

    def log_pdf(self, p, h, cache):
        raise NotImplementedError

    def cdf(self, p, h, cache):
        raise NotImplementedError

    def quantile(self, p, u, cache):
        raise NotImplementedError

    def log_moment(self, p, n):
        raise NotImplementedError

    def sigma2(self, p):
        raise NotImplementedError

    def normalize(self, free):
        raise NotImplementedError

    def mean(self, p):
        return math.exp(self.log_moment(p, 1))


class _Lognormal(_FamilyImpl):
    family = Family.LOGNORMAL

    def log_pdf(self, p, h, cache):
        lh = np.log(h)
        return (-lh - _LN2 - 0.5 * np.log(2 * np.pi * p.sigma2_X)
                - (lh - 2 * p.mu_X) ** 2 / (8 * p.sigma2_X))

    def cdf(self, p, h, cache):
        with np.errstate(divide="ignore"):
            z = (np.log(h) - 2 * p.mu_X) / (2 * math.sqrt(p.sigma2_X))
        return special.ndtr(z)

    def quantile(self, p, u, cache):
        return np.exp(2 * p.mu_X + 2 * math.sqrt(p.sigma2_X) * special.ndtri(u))

    def log_moment(self, p, n):
        return 2 * n * p.mu_X + 2 * n * n * p.sigma2_X

    def sigma2(self, p):
        return math.expm1(4 * p.sigma2_X)

    def normalize(self, free):
        s2 = free["sigma2_X"]
        return LognormalParams(sigma2_X=s2, mu_X=-s2)

    def mean(self, p):
        return math.exp(2 * p.mu_X + 2 * p.sigma2_X)


_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156)


def _gamma_density_constant(k):
    """k ln k - k - lnGamma(k), via the Stirling remainder for large k."""
    if k < 10.0:
        return k * math.log(k) - k - _gammaln(k)
    inv2 = 1.0 / (k * k)
    remainder = sum(c * inv2**i for i, c in enumerate(_STIRLING)) / k
    return 0.5 * math.log(k / (2 * math.pi)) - remainder


def _expm1mx(y):
    """exp(y) - 1 - y, accurate near y = 0."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        direct = np.expm1(y) - y
    small = np.abs(y) < 0.5
    if np.any(small):
        ys = np.where(small, y, 0.0)
        term = 0.5 * ys * ys
        total = term.copy()
        for n in range(3, 24):
            term = term * ys / n
            total += term
        direct = np.where(small, total, direct)
    return direct


def _log_gamma_variate_density(log_r, k):
    """ln of z^k e^-z / Gamma(k) at z = k r, written to avoid cancelling k ln k terms."""
    return _gamma_density_constant(k) - k * _expm1mx(log_r)


class _Gamma(_FamilyImpl):
    family = Family.GAMMA

    def log_pdf(self, p, h, cache):
        log_h = np.log(h)
        return _log_gamma_variate_density(log_h - math.log(p.k * p.theta), p.k) - log_h

    def cdf(self, p, h, cache):
        return special.gammainc(p.k, h / p.theta)

    def quantile(self, p, u, cache):
        return p.theta * special.gammaincinv(p.k, u)

    def log_moment(self, p, n):
        return n * math.log(p.theta) + _lgamma_difference(p.k, n)

    def sigma2(self, p):
        return 1.0 / p.k

    def normalize(self, free):
        k = free["k"]
        return GammaParams(k=k, theta=1.0 / k)


class _KDist(_FamilyImpl):
    family = Family.K_DIST

    def log_pdf(self, p, h, cache):
        a = p.alpha
        lah = math.log(a) + np.log(h)
        return (_LN2 + math.log(a) - _gammaln(a) + 0.5 * (a - 1) * lah
                + log_bessel_k(a - 1, 2 * np.exp(0.5 * lah)))

    def log_sf(self, p, h):
        # h = g*e with g ~ Gamma(alpha, 1/alpha), e ~ Exp(1):
        # P(h > t) = E[exp(-t/g)] = 2 (alpha t)^(alpha/2) K_alpha(2 sqrt(alpha t)) / Gamma(alpha)
        a = p.alpha
        lah = math.log(a) + np.log(h)
        out = _LN2 - _gammaln(a) + 0.5 * a * lah + log_bessel_k(a, 2 * np.exp(0.5 * lah))
        return np.minimum(out, 0.0)

    def cdf(self, p, h, cache):
        return -np.expm1(self.log_sf(p, h))

    def setup(self, params):
        return {}

    def quantile(self, p, u, cache):
        cdf_v = lambda v: self.cdf(p, np.exp(v), cache)  # noqa: E731
        table = _lazy(cache, "inverse", lambda: _InverseTable(cdf_v, np.arange(-745.0, 60.0, 0.05)))
        lo, hi, guess = table.start(u)
        return _numeric_quantile(cdf_v, lambda v: np.exp(self.log_pdf(p, np.exp(v), cache) + v),
                                 u, lo, hi, guess)

    def log_moment(self, p, n):
        a = p.alpha
        return _gammaln(n + 1.0) + _lgamma_difference(a, n) - n * math.log(a)

    def sigma2(self, p):
        return 1.0 + 2.0 / p.alpha

    def normalize(self, free):
        return KDistParams(alpha=free["alpha"])

    def mean(self, p):
        return 1.0


class _Weibull(_FamilyImpl):
    family = Family.WEIBULL

    def log_pdf(self, p, h, cache):
        lr = np.log(h) - math.log(p.eta)
        with np.errstate(over="ignore"):
            return math.log(p.beta / p.eta) + (p.beta - 1) * lr - np.exp(p.beta * lr)

    def cdf(self, p, h, cache):
        with np.errstate(over="ignore", divide="ignore"):
            return -np.expm1(-((h / p.eta) ** p.beta))

    def quantile(self, p, u, cache):
        return p.eta * (-np.log1p(-u)) ** (1.0 / p.beta)

    def log_moment(self, p, n):
        return n * math.log(p.eta) + _gammaln(1.0 + n / p.beta)

    def sigma2(self, p):
        return math.expm1(_lgamma_second_difference(1.0, 1.0 / p.beta))

    def normalize(self, free):
        b = free["beta"]
        return WeibullParams(beta=b, eta=math.exp(-_gammaln(1 + 1 / b)))


def _log_one_minus_exp_neg(log_x):
    """ln(1 - exp(-x)) given ln x, accurate for tiny and huge x."""
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        x = np.exp(log_x)
        return np.where(log_x < -30.0, log_x - 0.5 * x, np.log(-np.expm1(-x)))


class _ExpWeibull(_FamilyImpl):
    family = Family.EXP_WEIBULL

    def setup(self, params):
        a, b = params.alpha, params.beta
        return {"g1": g_converged(1, a, b), "g2": g_converged(2, a, b),
                "sigma2": _exp_weibull_sigma2(a, b)}

    def log_pdf(self, p, h, cache):
        lr = np.log(h) - math.log(p.eta)
        log_x = p.beta * lr
        with np.errstate(over="ignore"):
            x = np.exp(log_x)
        return (math.log(p.alpha * p.beta / p.eta) + (p.beta - 1) * lr - x
                + (p.alpha - 1) * _log_one_minus_exp_neg(log_x))

    def cdf(self, p, h, cache):
        with np.errstate(divide="ignore"):
            log_x = p.beta * (np.log(h) - math.log(p.eta))
        with np.errstate(under="ignore"):
            return np.exp(p.alpha * _log_one_minus_exp_neg(log_x))

    def quantile(self, p, u, cache):
        # solve 1 - exp(-x) = e^w for x = (h/eta)^beta
        w = np.log(u) / p.alpha
        with np.errstate(divide="ignore"):
            x = np.where(w < -_LN2, -np.log1p(-np.exp(w)), -np.log(-np.expm1(w)))
            return np.exp(math.log(p.eta) + np.log(x) / p.beta)

    def _g(self, n, p, cache):
        if cache is not None and n in (1, 2):
            return cache[f"g{n}"]
        return g_converged(n, p.alpha, p.beta)

    def log_moment(self, p, n, cache=None):
        return (math.log(p.alpha) + n * math.log(p.eta) + _gammaln(1.0 + n / p.beta)
                + math.log(self._g(n, p, cache)))

    def sigma2(self, p, cache=None):
        if cache is not None and "sigma2" in cache:
            return cache["sigma2"]
        return _exp_weibull_sigma2(p.alpha, p.beta)

    def normalize(self, free):
        a, b = free["alpha"], free["beta"]
        eta = 1.0 / (a * math.exp(_gammaln(1 + 1 / b)) * g_converged(1, a, b))
        return ExpWeibullParams(alpha=a, beta=b, eta=eta)


class _GammaGamma(_FamilyImpl):
    family = Family.GAMMA_GAMMA

    def validate(self, params):
        super().validate(params)
        product = params.alpha * params.beta
        if product > GAMMA_GAMMA_PRODUCT_CAP * (1 + 1e-12):
            raise ParameterCapError(
                f"Gamma-Gamma alpha*beta={product:.6g} exceeds {GAMMA_GAMMA_PRODUCT_CAP:g}: "
                "the Bessel argument leaves double range")

    def _const(self, p):
        a, b = p.alpha, p.beta
        return _LN2 + 0.5 * (a + b) * math.log(a * b) - _gammaln(a) - _gammaln(b)

    def log_density_u(self, p):
        a, b = p.alpha, p.beta
        const = self._const(p)
        half_log_ab = 0.5 * math.log(a * b)

        def ld(u):
            return const + 0.5 * (a + b) * u + log_bessel_k(a - b, 2 * np.exp(0.5 * u + half_log_ab))
        return ld

    def setup(self, params):
        spread = math.sqrt(math.log1p(self.sigma2(params)))
        return _LogGridCdf(self.log_density_u(params), -0.5 * spread**2, spread)

    def log_pdf(self, p, h, cache):
        return self.log_density_u(p)(np.log(h)) - np.log(h)

    def cdf(self, p, h, cache):
        with np.errstate(divide="ignore"):
            return cache(np.log(h))

    def quantile(self, p, u, cache):
        lo, hi, guess = cache.inverse_table().start(u)
        ld = self.log_density_u(p)
        return _numeric_quantile(cache, lambda v: np.exp(ld(v)), u, lo, hi, guess)

    def log_moment(self, p, n):
        a, b = p.alpha, p.beta
        return _lgamma_difference(a, n) + _lgamma_difference(b, n) - n * math.log(a * b)

    def sigma2(self, p):
        a, b = p.alpha, p.beta
        return 1.0 / a + 1.0 / b + 1.0 / (a * b)

    def normalize(self, free):
        return GammaGammaParams(alpha=free["alpha"], beta=free["beta"])

    def mean(self, p):
        return 1.0


class _GenGamma(_FamilyImpl):
    family = Family.GEN_GAMMA

    def log_pdf(self, p, h, cache):
        log_h = np.log(h)
        k = p.d / p.p
        log_r = p.p * (log_h - math.log(p.a)) - math.log(k)
        return math.log(p.p) + _log_gamma_variate_density(log_r, k) - log_h

    def cdf(self, p, h, cache):
        with np.errstate(over="ignore", divide="ignore"):
            return special.gammainc(p.d / p.p, (h / p.a) ** p.p)

    def quantile(self, p, u, cache):
        return p.a * special.gammaincinv(p.d / p.p, u) ** (1.0 / p.p)

    def log_moment(self, p, n):
        return n * math.log(p.a) + _lgamma_difference(p.d / p.p, n / p.p)

    def sigma2(self, p):
        return math.expm1(_lgamma_second_difference(p.d / p.p, 1.0 / p.p))

    def normalize(self, free):
        d, q = free["d"], free["p"]
        log_a = -_lgamma_difference(d / q, 1.0 / q)
        a = math.exp(log_a)
        if a == 0.0 or not math.isfinite(a):
            raise ParameterCapError(f"generalized Gamma scale exp({log_a:.4g}) is not representable")
        return GenGammaParams(a=a, d=d, p=q)


def _numeric_quantile(cdf_u, dens_u, u, lo, hi, guess):
    """Invert a CDF expressed in v = ln h by bracketed Newton iteration."""
    v = solve_increasing(cdf_u, dens_u, u, lo, hi, x0=guess, tol=1e-14)
    return np.exp(v)


_IMPLS = {impl.family: impl for impl in (
    _Lognormal(), _Gamma(), _KDist(), _Weibull(), _ExpWeibull(), _GammaGamma(), _GenGamma())}
for _fam, _impl in _IMPLS.items():
    _impl.n_free = len(FREE_PARAMETERS[_fam])


# --------------------------------------------------------------------------
# Public model


@dataclass(frozen=True)
class FadingModel:
    """A parameterised fading distribution.

    Instances are immutable; any per-instance cache (the tabulated CDF of
    Gamma-Gamma, the converged moment series of the exponentiated Weibull) is
    built eagerly at construction.
    """

    family: Family
    params: object
    normalized: bool = False
    _cache: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        family = Family.parse(self.family)
        object.__setattr__(self, "family", family)
        expected = _PARAM_TYPES[family]
        if isinstance(self.params, Mapping):
            object.__setattr__(self, "params", expected(**{k: float(v) for k, v in self.params.items()}))
        if not isinstance(self.params, expected):
            raise InputError(f"{family.value} requires {expected.__name__}, got {type(self.params).__name__}")
        impl = _IMPLS[family]
        impl.validate(self.params)
        object.__setattr__(self, "_cache", impl.setup(self.params))
        if self.normalized:
            mean = self._mean()
            if not abs(mean - 1.0) <= NORMALIZATION_TOLERANCE:
                raise ConstraintError(f"{family.value} model flagged normalized has mean {mean!r}")

    # -- helpers ---------------------------------------------------------
    @property
    def _impl(self) -> _FamilyImpl:
        return _IMPLS[self.family]

    def _mean(self):
        impl = self._impl
        if isinstance(impl, _ExpWeibull):
            return math.exp(impl.log_moment(self.params, 1, self._cache))
        return impl.mean(self.params)

    @property
    def n_free(self) -> int:
        return len(FREE_PARAMETERS[self.family])

    def free_parameters(self) -> dict:
        return {name: getattr(self.params, name) for name in FREE_PARAMETERS[self.family]}

    # -- distribution functions ----------------------------------------
    def log_pdf(self, h):
        """Natural log of the density at h > 0 (scalar or array)."""
        ha = _positive_h(h)
        with np.errstate(divide="ignore", under="ignore", over="ignore"):
            out = self._impl.log_pdf(self.params, ha, self._cache)
        return float(out) if np.ndim(h) == 0 else np.asarray(out, dtype=float)

    def pdf(self, h):
        with np.errstate(under="ignore"):
            return np.exp(self.log_pdf(h)) if np.ndim(h) else math.exp(self.log_pdf(h))

    def cdf(self, h):
        ha = np.asarray(h, dtype=float)
        if np.any(np.isnan(ha)) or np.any(ha < 0):
            raise DomainError("cdf requires h >= 0")
        flat = ha.ravel()
        out = np.zeros_like(flat)
        pos = flat > 0
        if np.any(pos):
            with np.errstate(under="ignore"):
                out[pos] = self._impl.cdf(self.params, flat[pos], self._cache)
        out = np.clip(out, 0.0, 1.0).reshape(ha.shape)
        return float(out) if np.ndim(h) == 0 else out

    def inverse_cdf(self, u):
        ua = np.asarray(u, dtype=float)
        if np.any(np.isnan(ua)) or np.any(ua <= 0) or np.any(ua >= 1):
            raise DomainError("inverse_cdf requires 0 < u < 1")
        flat = ua.ravel()
        with np.errstate(under="ignore", divide="ignore"):
            out = np.asarray(self._impl.quantile(self.params, flat, self._cache), dtype=float)
        if not np.all(np.isfinite(out) & (out > 0)):
            raise NumericalError(f"{self.family.value} quantile left the representable range")
        out = out.reshape(ua.shape)
        return float(out) if np.ndim(u) == 0 else out

    def moment(self, n: int) -> float:
        if int(n) != n or n < 1:
            raise DomainError("moment order must be a positive integer")
        impl = self._impl
        if isinstance(impl, _ExpWeibull):
            return math.exp(impl.log_moment(self.params, int(n), self._cache))
        if n == 1:
            return impl.mean(self.params)
        return math.exp(impl.log_moment(self.params, int(n)))

    def scintillation_index(self) -> float:
        if not self.normalized:
            raise ConstraintError("scintillation index is defined for normalized models only")
        impl = self._impl
        if isinstance(impl, _ExpWeibull):
            return impl.sigma2(self.params, self._cache)
        return impl.sigma2(self.params)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": asdict(self.params),
                "normalized": bool(self.normalized)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FadingModel":
        try:
            return cls(Family.parse(data["family"]), dict(data["params"]),
                       bool(data.get("normalized", False)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model record: {exc}") from None


def normalize(family, free=None, **kwargs) -> FadingModel:
    """Build the unit-mean model of ``family`` from its free parameters."""
    family = Family.parse(family)
    values = dict(free or {})
    values.update(kwargs)
    names = FREE_PARAMETERS[family]
    if set(values) != set(names):
        raise InputError(f"{family.value} takes free parameters {names}, got {tuple(values)}")
    for name in names:
        value = float(values[name])
        _check_positive(name, value)
        _check_cap(name, value)
        values[name] = value
    params = _IMPLS[family].normalize(values)
    return FadingModel(family, params, normalized=True)


def _solve_log(func, target, lo, hi):
    # func decreasing in x on [lo, hi]
    flo, fhi = func(lo), func(hi)
    if not (fhi <= target <= flo):
        raise InfeasibleError(f"scintillation index {target!r} outside [{fhi:.4g}, {flo:.4g}]")
    return math.exp(find_root(lambda v: math.log(func(math.exp(v))) - math.log(target),
                              (math.log(lo), math.log(hi)), 1e-14))


def from_scintillation_index(family, sigma2_I: float, **fixed) -> FadingModel:
    """Normalized model of ``family`` with the given scintillation index.

    Two-parameter families need one parameter fixed: ``alpha`` for the
    exponentiated Weibull (default 2), ``p`` for the generalized Gamma
    (default 2).  Gamma-Gamma uses alpha = beta unless ``alpha`` is given.
    """
    family = Family.parse(family)
    s = float(sigma2_I)
    if not (math.isfinite(s) and s > 0):
        raise InfeasibleError("scintillation index must be positive")
    if family is Family.LOGNORMAL:
        return normalize(family, sigma2_X=0.25 * math.log1p(s))
    if family is Family.GAMMA:
        return normalize(family, k=1.0 / s)
    if family is Family.K_DIST:
        if s <= 1.0:
            raise InfeasibleError("the K distribution requires a scintillation index above 1")
        return normalize(family, alpha=2.0 / (s - 1.0))
    if family is Family.WEIBULL:
        impl = _IMPLS[family]
        beta = _solve_log(lambda b: impl.sigma2(impl.normalize({"beta": b})), s, 0.05, 1e5)
        return normalize(family, beta=beta)
    if family is Family.EXP_WEIBULL:
        alpha = float(fixed.get("alpha", 2.0))
        impl = _IMPLS[family]
        beta = _solve_log(lambda b: impl.sigma2(ExpWeibullParams(alpha, b, 1.0)), s, 0.1, 1e4)
        return normalize(family, alpha=alpha, beta=beta)
    if family is Family.GAMMA_GAMMA:
        if "alpha" in fixed:
            alpha = float(fixed["alpha"])
            if s <= 1.0 / alpha:
                raise InfeasibleError(f"Gamma-Gamma with alpha={alpha} needs sigma2_I > {1 / alpha:.6g}")
            beta = (1.0 + 1.0 / alpha) / (s - 1.0 / alpha)
        else:
            alpha = beta = (1.0 + math.sqrt(1.0 + s)) / s
        return normalize(family, alpha=alpha, beta=beta)
    if family is Family.GEN_GAMMA:
        p = float(fixed.get("p", 2.0))
        impl = _IMPLS[family]
        d = _solve_log(lambda d: impl.sigma2(GenGammaParams(1.0, d, p)), s, 1e-3, 1e6)
        return normalize(family, d=d, p=p)
    raise InputError(f"unsupported family {family}")
