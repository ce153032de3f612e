"""Command-line entry point: ``uwoc-fading {simulate,fit,coherence}``.

Exit codes: 0 success, 2 bad input or flags, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import FREE_PARAMETERS, Family, FadingModel, from_scintillation_index, normalize
from .errors import FadingError, InputError, NumericalError
from .estimation import (FitConfig, build_histogram, estimate_scintillation_index, fit_all,
                         normalize_series, parse_bin_rule)
from .io import (SeriesFile, SeriesFormat, build_coherence_report, build_fit_report,
                 fit_config_echo, load_series, save_series, write_report)
from .sampling import (DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLING_RATE, RngStream, SimulationSpec,
                       sample, simulate_fading_series)
from .temporal import DEFAULT_THRESHOLD_DB, coherence_time, covariance_coefficient

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive(text):
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"{text!r} is not a positive number")
    return value


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return value


def _families(text):
    try:
        return [Family.parse(part) for part in text.split(",") if part.strip()]
    except InputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bins(text):
    try:
        return parse_bin_rule(text)
    except InputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), float(value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uwoc-fading", description="Fading statistics for optical intensity series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_input(p):
        p.add_argument("--input", required=True, help="series CSV file")
        p.add_argument("--rate", type=_positive, help="sampling rate in Hz (single-column input)")
        p.add_argument("--format", choices=["auto", "single", "time-value"], default="auto")
        p.add_argument("--reproducible", action="store_true", help="omit the report timestamp")
        p.add_argument("--threshold-db", type=float, default=DEFAULT_THRESHOLD_DB)

    sim = sub.add_parser("simulate", help="generate a fading series")
    sim.add_argument("--family", required=True, type=Family.parse)
    sim.add_argument("--params", nargs="+", type=_key_value, metavar="K=V")
    sim.add_argument("--sigma2i", type=_positive, help="target scintillation index (one-parameter families)")
    sim.add_argument("--coherence", type=_positive,
                     help="coherence time in seconds; omit for independent samples")
    sim.add_argument("--rate", type=_positive, default=DEFAULT_SAMPLING_RATE)
    sim.add_argument("--duration", type=_positive, default=DEFAULT_SAMPLE_COUNT / DEFAULT_SAMPLING_RATE)
    sim.add_argument("--seed", type=_u64, default=0)
    sim.add_argument("--stream", type=_u64, default=0)
    sim.add_argument("--format", choices=["single", "time-value"], default="single")
    sim.add_argument("--out", required=True)

    fitp = sub.add_parser("fit", help="fit fading families to a series")
    add_input(fitp)
    fitp.add_argument("--families", type=_families, default=list(Family))
    fitp.add_argument("--bins", type=_bins, default="freedman_diaconis")
    fitp.add_argument("--grid-points", type=int, default=25)
    fitp.add_argument("--refine-iterations", type=int, default=400)
    fitp.add_argument("--seed", type=_u64, default=0,
                      help="recorded for provenance; the fit itself is deterministic")
    fitp.add_argument("--threads", type=int, default=1)
    fitp.add_argument("--out", default="-", help="report path (default stdout)")
    fitp.add_argument("--curves", help="directory for histogram and fitted-PDF CSV files")

    coh = sub.add_parser("coherence", help="temporal covariance and coherence time")
    add_input(coh)
    coh.add_argument("--max-lag", type=_positive, help="seconds (default a quarter of the record)")
    coh.add_argument("--out", default="-")
    coh.add_argument("--curve", help="CSV path for b(tau)")
    return parser


def _load(args):
    fmt = None if args.format == "auto" else SeriesFormat.parse(args.format)
    return load_series(SeriesFile(args.input, fmt, args.rate))


def _simulation_model(args) -> FadingModel:
    if args.params and args.sigma2i is not None:
        raise InputError("give either --params or --sigma2i, not both")
    family = args.family
    if args.sigma2i is not None:
        if len(FREE_PARAMETERS[family]) != 1:
            raise InputError(f"--sigma2i needs a one-parameter family; {family.value} has two, use --params")
        return from_scintillation_index(family, args.sigma2i)
    if not args.params:
        raise InputError("one of --params or --sigma2i is required")
    values = dict(args.params)
    if set(values) == set(FREE_PARAMETERS[family]):
        return normalize(family, values)
    return FadingModel(family, values, normalized=True)


def cmd_simulate(args) -> int:
    model = _simulation_model(args)
    rng = RngStream(args.seed, args.stream)
    if args.coherence is None:
        from .estimation import IntensitySeries
        n = int(round(args.duration * args.rate))
        meta = {"source": "simulated", "family": model.family.value, "seed": str(args.seed),
                "stream_id": str(args.stream)}
        series = IntensitySeries(sample(model, n, rng), args.rate, meta)
    else:
        series = simulate_fading_series(SimulationSpec(model, args.coherence, args.duration, rng, args.rate))
    save_series(series, args.out, args.format)
    params = ", ".join(f"{k}={v!r}" for k, v in model.to_dict()["params"].items())
    print(f"family={model.family.value} params=({params}) samples={len(series)} "
          f"empirical_sigma2_I={estimate_scintillation_index(series)!r}")
    return EXIT_OK


def _coherence_section(series, threshold_db, max_lag=None):
    curve = covariance_coefficient(series, max_lag)
    est = coherence_time(curve, threshold_db)
    section = est.to_dict()
    section["max_lag_seconds"] = float(curve.lags[-1])
    return curve, section


def _write_curves(directory, hist, results):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    widths = np.diff(hist.edges)
    with open(out / "histogram.csv", "w", encoding="utf-8") as fh:
        fh.write("left_edge,right_edge,mass,density\n")
        for lo, hi, m, w in zip(hist.edges[:-1], hist.edges[1:], hist.masses, widths):
            fh.write(f"{lo!r},{hi!r},{m!r},{m / w!r}\n")
    grid = np.linspace(max(hist.edges[0], 1e-12), hist.edges[-1], 512)
    for r in results:
        if r.model is None:
            continue
        with open(out / f"pdf_{r.family.value}.csv", "w", encoding="utf-8") as fh:
            fh.write("h,pdf\n")
            for h, p in zip(grid, r.model.pdf(grid)):
                fh.write(f"{float(h)!r},{float(p)!r}\n")


def cmd_fit(args) -> int:
    series = _load(args)
    config = FitConfig(bin_rule=args.bins, grid_points_per_dim=args.grid_points,
                       refine_iterations=args.refine_iterations)
    normalized = normalize_series(series)
    hist = build_histogram(normalized, config)
    empirical = estimate_scintillation_index(normalized)
    results = fit_all(normalized, args.families, config, threads=max(args.threads, 1))
    _, coherence = _coherence_section(series, args.threshold_db)
    echo = fit_config_echo(config, families=[f.value for f in sorted(set(args.families), key=lambda f: f.order)],
                           seed=args.seed, threads=args.threads, threshold_db=args.threshold_db,
                           input_format=args.format, rate_flag=args.rate)
    report = build_fit_report(series, results, hist, empirical, coherence, echo, args.reproducible)
    if args.curves:
        _write_curves(args.curves, hist, results)
    write_report(report, args.out)
    return EXIT_OK


def cmd_coherence(args) -> int:
    series = _load(args)
    curve, section = _coherence_section(series, args.threshold_db, args.max_lag)
    if args.curve:
        curve.to_csv(args.curve)
    echo = {"threshold_db": args.threshold_db, "max_lag_seconds": args.max_lag,
            "input_format": args.format, "rate_flag": args.rate}
    write_report(build_coherence_report(series, section, echo, args.reproducible), args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "coherence": cmd_coherence}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"uwoc-fading: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"uwoc-fading: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"uwoc-fading: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FadingError as exc:  # pragma: no cover - every subclass is handled above
        print(f"uwoc-fading: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
