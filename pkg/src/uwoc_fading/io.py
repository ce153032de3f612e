"""Series files and JSON reports.

Series are plain UTF-8 CSV: either one intensity per line (optional header
``intensity``) or ``time,intensity`` pairs.  A single-column file carries no
timing, so its sampling rate comes from a flag or from a sidecar
``<file>.json`` holding ``{"sampling_rate": ...}``.  Floats are written with
``repr`` which round-trips every double exactly.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import InputError, ParseError
from .estimation import FitConfig, FitResult, Histogram, IntensitySeries, MIN_SERIES_LENGTH

SCHEMA_VERSION = 1
TOOLKIT_NAME = "uwoc-fading"
TIMESTAMP_JITTER = 1e-6


class SeriesFormat(str, Enum):
    SINGLE_COLUMN = "single_column"
    TIME_VALUE = "time_value"

    @classmethod
    def parse(cls, value) -> "SeriesFormat":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"single": cls.SINGLE_COLUMN, "single_column": cls.SINGLE_COLUMN,
                   "time_value": cls.TIME_VALUE, "time": cls.TIME_VALUE}
        if key not in aliases:
            raise InputError(f"unknown series format {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class SeriesFile:
    """Location and layout of a series on disk.

    ``format=None`` detects the layout from the header or column count.
    """

    path: str
    format: SeriesFormat | None = None
    sampling_rate: float | None = None


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("file is not valid UTF-8", path=path) from exc
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            rows.append((lineno, [c.strip() for c in line.split(",")]))
    return rows


def _is_header(cells):
    return [c.lower() for c in cells] in (["intensity"], ["time", "intensity"])


def _to_float(cell, lineno, path):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", lineno, path) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", lineno, path)
    return value


def _rate_from_times(times, path):
    deltas = np.diff(times)
    if np.any(deltas <= 0):
        raise InputError(f"{path}: timestamps must increase strictly")
    step = float(np.median(deltas))
    if np.max(np.abs(deltas - step)) > TIMESTAMP_JITTER * step:
        raise InputError(f"{path}: timestamps are not uniformly spaced")
    return float(f"{1.0 / step:.12g}")


def _sidecar_rate(path):
    side = sidecar_path(path)
    if not side.exists():
        return None
    try:
        data = json.loads(side.read_text(encoding="utf-8"))
        return float(data["sampling_rate"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"unreadable sidecar {side}: {exc}") from exc


def _sidecar_metadata(path):
    side = sidecar_path(path)
    if not side.exists():
        return {}
    data = json.loads(side.read_text(encoding="utf-8"))
    meta = data.get("metadata", {})
    return meta if isinstance(meta, dict) else {}


def load_series(file: SeriesFile | str, sampling_rate: float | None = None,
                format: SeriesFormat | str | None = None) -> IntensitySeries:
    """Read a series file into an :class:`IntensitySeries`."""
    if not isinstance(file, SeriesFile):
        file = SeriesFile(str(file), format, sampling_rate)
    path = file.path
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    rows = _read_rows(path)
    if rows and _is_header(rows[0][1]):
        header = rows.pop(0)[1]
        detected = SeriesFormat.TIME_VALUE if len(header) == 2 else SeriesFormat.SINGLE_COLUMN
    elif rows:
        detected = SeriesFormat.TIME_VALUE if len(rows[0][1]) == 2 else SeriesFormat.SINGLE_COLUMN
    else:
        detected = SeriesFormat.SINGLE_COLUMN
    fmt = SeriesFormat.parse(file.format) if file.format is not None else detected
    width = 2 if fmt is SeriesFormat.TIME_VALUE else 1

    values = np.empty((len(rows), width))
    for i, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise ParseError(f"expected {width} column(s), found {len(cells)}", lineno, path)
        for j, cell in enumerate(cells):
            values[i, j] = _to_float(cell, lineno, path)
    if len(rows) < MIN_SERIES_LENGTH:
        raise InputError(f"{path}: {len(rows)} samples, at least {MIN_SERIES_LENGTH} required")
    intensity = values[:, -1]
    bad = np.nonzero(intensity <= 0)[0]
    if bad.size:
        raise ParseError("intensity samples must be positive", rows[bad[0]][0], path)

    if fmt is SeriesFormat.TIME_VALUE:
        rate = _rate_from_times(values[:, 0], path)
        if file.sampling_rate is not None and not math.isclose(rate, file.sampling_rate, rel_tol=1e-6):
            raise InputError(f"{path}: timestamps imply {rate!r} Hz but {file.sampling_rate!r} Hz was given")
    else:
        rate = file.sampling_rate if file.sampling_rate is not None else _sidecar_rate(path)
        if rate is None:
            raise InputError(f"{path}: single-column input needs a sampling rate (flag or sidecar)")
    meta = {"path": str(path), "format": fmt.value}
    meta.update({str(k): str(v) for k, v in _sidecar_metadata(path).items()})
    return IntensitySeries(intensity, rate, meta)


def save_series(series: IntensitySeries, path, format: SeriesFormat | str = SeriesFormat.SINGLE_COLUMN,
                sidecar: bool = True) -> None:
    """Write a series; single-column files get a rate sidecar unless ``sidecar`` is false."""
    fmt = SeriesFormat.parse(format)
    lines = []
    if fmt is SeriesFormat.TIME_VALUE:
        lines.append("time,intensity")
        times = np.arange(len(series)) / series.sampling_rate
        lines.extend(f"{t!r},{v!r}" for t, v in zip(times.tolist(), series.samples.tolist()))
    else:
        lines.append("intensity")
        lines.extend(repr(v) for v in series.samples.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if sidecar and fmt is SeriesFormat.SINGLE_COLUMN:
        side = {"sampling_rate": series.sampling_rate, "metadata": dict(series.metadata)}
        sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Reports


def toolkit_version() -> str:
    from . import __version__
    return __version__


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _header(reproducible: bool) -> dict:
    out = {"schema_version": SCHEMA_VERSION,
           "toolkit": {"name": TOOLKIT_NAME, "version": toolkit_version()}}
    if not reproducible:
        out["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return out


def input_descriptor(series: IntensitySeries) -> dict:
    return {"path": series.metadata.get("path"), "format": series.metadata.get("format"),
            "sampling_rate": series.sampling_rate, "sample_count": len(series),
            "mean_intensity": math.fsum(series.samples) / len(series)}


def fit_entry(result: FitResult) -> dict:
    model = result.model
    return {
        "family": result.family.value,
        "params": dict(model.to_dict()["params"]) if model is not None else None,
        "gof": _finite_or_none(result.gof),
        "implied_sigma2_I": _finite_or_none(result.implied_sigma2_I),
        "regime_flag": result.regime_flag.value,
        "converged": result.converged,
        "message": result.message,
    }


def build_fit_report(series: IntensitySeries, results: list[FitResult], histogram: Histogram,
                     empirical_sigma2_I: float, coherence: Mapping[str, Any] | None,
                     config: Mapping[str, Any], reproducible: bool = False) -> dict:
    report = _header(reproducible)
    report.update({
        "kind": "fit",
        "input": input_descriptor(series),
        "config": dict(config),
        "empirical_sigma2_I": empirical_sigma2_I,
        "histogram": {"rule": histogram.rule, "bin_count": histogram.bin_count,
                      "sample_count": histogram.sample_count,
                      "edges": histogram.edges.tolist()},
        "entries": [fit_entry(r) for r in results],
        "coherence": dict(coherence) if coherence is not None else None,
    })
    return report


def build_coherence_report(series: IntensitySeries, coherence: Mapping[str, Any],
                           config: Mapping[str, Any], reproducible: bool = False) -> dict:
    report = _header(reproducible)
    report.update({"kind": "coherence", "input": input_descriptor(series),
                   "config": dict(config), "coherence": dict(coherence)})
    return report


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def write_report(report: Mapping[str, Any], path) -> None:
    text = dumps_report(report)
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def load_schema(kind: str) -> dict:
    """JSON schema for a ``fit`` or ``coherence`` report."""
    name = {"fit": "fit_report.schema.json", "coherence": "coherence_report.schema.json"}[kind]
    return json.loads(resources.files("uwoc_fading").joinpath("schemas", name).read_text(encoding="utf-8"))


def fit_config_echo(config: FitConfig, **extra) -> dict:
    out = config.to_dict()
    out.update(extra)
    return out
