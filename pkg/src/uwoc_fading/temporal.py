"""Temporal covariance coefficient of irradiance and coherence time."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft

from .errors import DegenerateError, InputError

DEFAULT_THRESHOLD_DB = -3.0


@dataclass(frozen=True)
class CovarianceCurve:
    """b(tau) sampled at lags k / sampling_rate."""

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if lags.ndim != 1 or lags.shape != values.shape or lags.size < 2:
            raise InputError("lags and values must be equal-length vectors with at least two points")
        if lags[0] != 0 or np.any(np.diff(lags) <= 0):
            raise InputError("lags must start at 0 and increase strictly")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lag_seconds", "b_value"])
            for lag, val in zip(self.lags, self.values):
                writer.writerow([repr(float(lag)), repr(float(val))])


@dataclass(frozen=True)
class CoherenceEstimate:
    seconds: float
    lower_bound_only: bool
    threshold_db: float

    def to_dict(self) -> dict:
        return {"threshold_db": self.threshold_db, "coherence_time_seconds": self.seconds,
                "lower_bound_only": self.lower_bound_only}


def _max_lag_index(n, rate, max_lag):
    limit = n // 4
    if max_lag is None:
        return limit
    if not (max_lag > 0 and math.isfinite(max_lag)):
        raise InputError("max_lag must be a positive number of seconds")
    k = int(math.floor(max_lag * rate + 1e-9))
    if k > limit:
        raise InputError(f"max_lag {max_lag!r} s exceeds a quarter of the series ({limit / rate!r} s)")
    if k < 1:
        raise InputError("max_lag is shorter than one sample period")
    return k


def covariance_coefficient(series, max_lag: float | None = None,
                           sampling_rate: float | None = None) -> CovarianceCurve:
    """Biased sample autocovariance of the mean-removed series, scaled to b(0) = 1.

    ``max_lag`` is in seconds and defaults to a quarter of the record length.
    """
    rate = sampling_rate if sampling_rate is not None else getattr(series, "sampling_rate", None)
    if rate is None or not rate > 0:
        raise InputError("a positive sampling rate is required")
    x = np.asarray(getattr(series, "samples", series), dtype=float)
    n = x.size
    if n < 16:
        raise InputError("covariance estimation needs at least 16 samples")
    kmax = _max_lag_index(n, rate, max_lag)
    dev = x - x.mean()
    nfft = fft.next_fast_len(2 * n)
    spec = fft.rfft(dev, nfft)
    acov = fft.irfft(spec * np.conj(spec), nfft)[:kmax + 1] / n
    b0 = acov[0]
    if not b0 > 0:
        raise DegenerateError("series has zero variance; the covariance coefficient is undefined")
    values = acov / b0
    values[0] = 1.0
    lags = np.arange(kmax + 1) / rate
    return CovarianceCurve(lags, values)


def coherence_time(curve: CovarianceCurve, threshold_db: float = DEFAULT_THRESHOLD_DB) -> CoherenceEstimate:
    """First lag where b(tau) drops below 10**(threshold_db/10), linearly interpolated."""
    if not (threshold_db < 0 and math.isfinite(threshold_db)):
        raise InputError("threshold_db must be negative")
    level = 10.0 ** (threshold_db / 10.0)
    below = np.nonzero(curve.values < level)[0]
    if below.size == 0:
        return CoherenceEstimate(float(curve.lags[-1]), True, float(threshold_db))
    k = int(below[0])
    v0, v1 = curve.values[k - 1], curve.values[k]
    t0, t1 = curve.lags[k - 1], curve.lags[k]
    seconds = t0 + (t1 - t0) * (v0 - level) / (v0 - v1)
    return CoherenceEstimate(float(seconds), False, float(threshold_db))


def write_curve_csv(curve: CovarianceCurve, path: str | Path) -> None:
    curve.to_csv(path)
