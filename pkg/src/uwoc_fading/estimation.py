"""Measurement pipeline: normalisation, scintillation index, histogram, R^2 fit.

Each family is fitted by maximising the histogram R^2 over its free
parameters (one or two once the unit-mean constraint fixes the scale).  The
search is a log-spaced grid over the family's parameter range followed by
bounded Nelder-Mead refinement from the best few grid points.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
from scipy import optimize

from .distributions import (FREE_PARAMETERS, GAMMA_GAMMA_PRODUCT_CAP, SEARCH_BOUNDS, Family,
                            FadingModel, from_scintillation_index, normalize)
from .errors import DegenerateError, FadingError, InputError

MIN_SERIES_LENGTH = 16


@dataclass(frozen=True)
class IntensitySeries:
    """Received-intensity samples with their sampling rate and scenario labels."""

    samples: np.ndarray
    sampling_rate: float
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in dict(self.metadata).items()})
        if samples.ndim != 1 or samples.size < MIN_SERIES_LENGTH:
            raise InputError(f"an intensity series needs at least {MIN_SERIES_LENGTH} samples")
        if not np.all(np.isfinite(samples)) or np.any(samples <= 0):
            raise InputError("intensity samples must be finite and positive")
        rate = float(self.sampling_rate)
        if not (math.isfinite(rate) and rate > 0):
            raise InputError("sampling_rate must be positive")
        object.__setattr__(self, "sampling_rate", rate)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class NormalizedFadingSeries:
    samples: np.ndarray
    sampling_rate: float | None
    source_mean: float

    def __len__(self):
        return self.samples.size


def _samples_of(series) -> np.ndarray:
    if isinstance(series, (IntensitySeries, NormalizedFadingSeries)):
        return series.samples
    return np.asarray(series, dtype=float)


def normalize_series(series) -> NormalizedFadingSeries:
    """Divide a series by its arithmetic mean."""
    x = _samples_of(series)
    if x.size == 0:
        raise InputError("empty series")
    mean = math.fsum(x) / x.size
    if not (math.isfinite(mean) and mean > 0):
        raise DegenerateError(f"cannot normalize a series with mean {mean!r}")
    rate = getattr(series, "sampling_rate", None)
    out = x / mean
    out.setflags(write=False)
    return NormalizedFadingSeries(out, rate, mean)


def estimate_scintillation_index(series) -> float:
    """Empirical E[I^2]/E[I]^2 - 1 with population (1/N) moments."""
    x = _samples_of(series)
    if x.size < 2:
        raise InputError("the scintillation index needs at least two samples")
    xl = x.astype(np.longdouble)
    mean = xl.sum() / xl.size
    if not (np.isfinite(mean) and mean != 0):
        raise DegenerateError("scintillation index undefined for zero mean")
    dev = xl - mean
    return float((dev * dev).sum() / xl.size / (mean * mean))


# --------------------------------------------------------------------------
# Histogram and goodness of fit


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    sample_count: int
    rule: str = "fixed"

    @property
    def bin_count(self) -> int:
        return self.masses.size


@dataclass(frozen=True)
class FitConfig:
    """Binning and optimiser settings.

    ``bin_rule`` is ``"freedman_diaconis"``, ``"sturges"`` or a positive
    integer bin count.
    """

    bin_rule: str | int = "freedman_diaconis"
    grid_points_per_dim: int = 25
    refine_iterations: int = 400
    refine_tolerance: float = 1e-7
    max_bins: int = 2000
    refine_starts: int = 3

    def __post_init__(self):
        object.__setattr__(self, "bin_rule", parse_bin_rule(self.bin_rule))
        for name in ("grid_points_per_dim", "refine_iterations", "max_bins", "refine_starts"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be positive")
        if not self.refine_tolerance > 0:
            raise InputError("refine_tolerance must be positive")

    def to_dict(self) -> dict:
        return {"bin_rule": self.bin_rule, "grid_points_per_dim": self.grid_points_per_dim,
                "refine_iterations": self.refine_iterations,
                "refine_tolerance": self.refine_tolerance, "max_bins": self.max_bins,
                "refine_starts": self.refine_starts}


def parse_bin_rule(rule) -> str | int:
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        if rule < 1:
            raise InputError("bin count must be positive")
        return int(rule)
    text = str(rule).strip().lower().replace("-", "_")
    if text in ("fd", "freedman_diaconis", "freedmandiaconis"):
        return "freedman_diaconis"
    if text == "sturges":
        return "sturges"
    if text.isdigit() and int(text) > 0:
        return int(text)
    raise InputError(f"unknown bin rule {rule!r}")


def _bin_count(x, rule, max_bins):
    n = x.size
    span = float(x.max() - x.min())
    if isinstance(rule, int):
        return rule
    if rule == "sturges" or span == 0:
        return int(math.ceil(math.log2(n))) + 1
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) * n ** (-1.0 / 3.0)
    if width <= 0:
        return int(math.ceil(math.log2(n))) + 1
    return int(min(max(math.ceil(span / width), 1), max_bins))


def build_histogram(series, config: FitConfig | None = None) -> Histogram:
    """Per-bin probability masses of a normalized series."""
    config = config or FitConfig()
    x = _samples_of(series)
    if x.size < 1 or not np.all(np.isfinite(x)):
        raise InputError("histogram needs finite samples")
    m = _bin_count(x, config.bin_rule, config.max_bins)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        pad = max(abs(lo), 1.0) * 1e-9
        lo, hi = lo - pad, hi + pad
    edges = np.linspace(lo, hi, m + 1)
    counts, _ = np.histogram(x, bins=edges)
    nz = np.nonzero(counts)[0]
    counts = counts[nz[0]:nz[-1] + 1]
    edges = edges[nz[0]:nz[-1] + 2]
    masses = counts / x.size
    rule = config.bin_rule if isinstance(config.bin_rule, str) else "fixed"
    return Histogram(edges, masses, int(x.size), rule)


def goodness_of_fit(hist: Histogram, model: FadingModel) -> float:
    """R^2 between measured bin masses and model bin probabilities."""
    _check_histogram(hist)
    measured = np.asarray(hist.masses, dtype=float)
    predicted = np.diff(model.cdf(np.maximum(hist.edges, 0.0)))
    ss_tot = float(np.sum((measured - measured.mean()) ** 2))
    ss_reg = float(np.sum((measured - predicted) ** 2))
    if ss_tot == 0.0:
        # flat multi-bin histogram: only a perfect prediction scores
        return 1.0 if ss_reg == 0.0 else -math.inf
    return 1.0 - ss_reg / ss_tot


def _check_histogram(hist: Histogram):
    if hist.bin_count < 2:
        raise DegenerateError("all samples fall in one bin (constant data); R^2 is undefined")


# --------------------------------------------------------------------------
# Fitting


class RegimeFlag(str, Enum):
    OK = "ok"
    INAPPLICABLE_REGIME = "inapplicable_regime"
    PARAMETER_CAP_HIT = "parameter_cap_hit"
    NUMERIC_FAILURE = "numeric_failure"


@dataclass(frozen=True)
class FitResult:
    family: Family
    model: FadingModel | None
    gof: float
    implied_sigma2_I: float
    empirical_sigma2_I: float
    regime_flag: RegimeFlag
    converged: bool = True
    message: str = ""

    @property
    def n_free(self) -> int:
        return len(FREE_PARAMETERS[self.family])


_BAD = 1e300


def _objective_factory(family, hist, bounds_log):
    names = FREE_PARAMETERS[family]

    def build(logp):
        values = {name: math.exp(v) for name, v in zip(names, logp)}
        if family is Family.GAMMA_GAMMA and values["alpha"] * values["beta"] > GAMMA_GAMMA_PRODUCT_CAP:
            return None
        return normalize(family, values)

    def objective(logp):
        logp = np.clip(logp, bounds_log[:, 0], bounds_log[:, 1])
        try:
            model = build(logp)
            if model is None:
                return _BAD
            r2 = goodness_of_fit(hist, model)
        except (FadingError, FloatingPointError, OverflowError, ValueError):
            return _BAD
        return -r2 if math.isfinite(r2) else _BAD

    return build, objective


def _nested_candidates(family, axes, bounds_log):
    """Grid lines on which a two-parameter family reduces to a simpler one.

    Seeding these makes the fit of the richer family at least as good as the
    fit of the family it contains, up to optimizer tolerance.
    """
    out = []
    if family is Family.EXP_WEIBULL:
        # alpha = 1 is plain Weibull
        out = [(0.0, b) for b in axes[1]]
    elif family is Family.GEN_GAMMA:
        # p = 1 is Gamma, d = p is Weibull
        out = [(d, 0.0) for d in axes[0]] + [(p, p) for p in axes[1]]
    return [c for c in out if all(lo <= v <= hi for v, (lo, hi) in zip(c, bounds_log))]


def _cap_binds(family, logp, bounds_log, tol=1e-3):
    if np.any(np.abs(logp - bounds_log[:, 0]) < tol) or np.any(np.abs(logp - bounds_log[:, 1]) < tol):
        return True
    if family is Family.GAMMA_GAMMA:
        return float(np.sum(logp)) > math.log(GAMMA_GAMMA_PRODUCT_CAP) - tol
    return False


def fit(series, family, config: FitConfig | None = None, hist: Histogram | None = None) -> FitResult:
    """Best-R^2 normalized model of ``family`` for a fading series."""
    config = config or FitConfig()
    family = Family.parse(family)
    if not isinstance(series, NormalizedFadingSeries):
        series = normalize_series(series)
    empirical = estimate_scintillation_index(series)
    hist = hist if hist is not None else build_histogram(series, config)
    names = FREE_PARAMETERS[family]
    bounds_log = np.log(np.array([SEARCH_BOUNDS[family][n] for n in names], dtype=float))
    build, objective = _objective_factory(family, hist, bounds_log)

    _check_histogram(hist)
    axes = [np.linspace(lo, hi, config.grid_points_per_dim) for lo, hi in bounds_log]
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(names), -1).T
    spacing = np.array([(hi - lo) / max(config.grid_points_per_dim - 1, 1) for lo, hi in bounds_log])
    candidates = [tuple(p) for p in grid] + _nested_candidates(family, axes, bounds_log)
    if len(names) == 1:
        try:
            seed = from_scintillation_index(family, empirical)
            candidates.append((math.log(seed.free_parameters()[names[0]]),))
        except FadingError:
            pass
    scored = sorted(((objective(np.array(c)), c) for c in candidates), key=lambda t: (t[0], t[1]))
    if scored[0][0] >= _BAD:
        return _failed(family, empirical, "no grid point gave a finite goodness of fit")

    starts = []
    for value, c in scored:
        if value >= _BAD:
            break
        if all(np.any(np.abs(np.array(c) - np.array(s)) > 0.5 * spacing) for s in starts):
            starts.append(c)
        if len(starts) == config.refine_starts:
            break

    best_val, best_x, converged = scored[0][0], np.array(scored[0][1]), True
    for start in starts:
        x0 = np.array(start)
        simplex = [x0]
        for i in range(len(names)):
            step = np.zeros(len(names))
            step[i] = 0.5 * spacing[i] if x0[i] + 0.5 * spacing[i] <= bounds_log[i, 1] else -0.5 * spacing[i]
            simplex.append(x0 + step)
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead", bounds=[tuple(b) for b in bounds_log],
            options={"maxiter": config.refine_iterations, "xatol": config.refine_tolerance,
                     "fatol": config.refine_tolerance, "initial_simplex": np.array(simplex)})
        if res.fun < best_val or (res.fun == best_val and tuple(res.x) < tuple(best_x)):
            best_val, best_x, converged = float(res.fun), np.clip(res.x, bounds_log[:, 0], bounds_log[:, 1]), bool(res.success)

    model = build(best_x)
    gof = -best_val
    if family is Family.K_DIST and empirical <= 1.0:
        flag = RegimeFlag.INAPPLICABLE_REGIME
    elif _cap_binds(family, best_x, bounds_log):
        flag = RegimeFlag.PARAMETER_CAP_HIT
    else:
        flag = RegimeFlag.OK
    message = "" if converged else "simplex refinement stopped before reaching its tolerance"
    return FitResult(family, model, gof, model.scintillation_index(), empirical, flag, converged, message)


def _failed(family, empirical, message):
    return FitResult(family, None, math.nan, math.nan, empirical, RegimeFlag.NUMERIC_FAILURE,
                     False, message)


def rank_key(result: FitResult):
    gof = result.gof if math.isfinite(result.gof) else -math.inf
    return (-gof, result.n_free, result.family.order)


def fit_all(series, families: Iterable | None = None, config: FitConfig | None = None,
            threads: int = 1) -> list[FitResult]:
    """Fit every requested family and rank by goodness of fit."""
    config = config or FitConfig()
    families = list(Family) if families is None else [Family.parse(f) for f in families]
    families = sorted(set(families), key=lambda f: f.order)
    if not families:
        raise InputError("at least one family is required")
    if not isinstance(series, NormalizedFadingSeries):
        series = normalize_series(series)
    hist = build_histogram(series, config)
    empirical = estimate_scintillation_index(series)

    def one(fam):
        try:
            return fit(series, fam, config, hist)
        except DegenerateError:
            raise
        except FadingError as exc:
            return _failed(fam, empirical, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, families))
    else:
        results = [one(f) for f in families]
    return sorted(results, key=rank_key)
