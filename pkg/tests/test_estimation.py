import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uwoc_fading.distributions import FREE_PARAMETERS, Family, from_scintillation_index, normalize
from uwoc_fading.errors import DegenerateError, InputError
from uwoc_fading.estimation import (FitConfig, Histogram, IntensitySeries, RegimeFlag, build_histogram,
                                    estimate_scintillation_index, fit, fit_all, goodness_of_fit,
                                    normalize_series, parse_bin_rule)
from uwoc_fading.sampling import RngStream, sample

N_ACQ = 2**15


def draws(model, seed, n=N_ACQ):
    return sample(model, n, RngStream(seed, 0))


# -- series types ---------------------------------------------------------

def test_intensity_series_validation():
    with pytest.raises(InputError):
        IntensitySeries(np.ones(15), 5000.0)
    with pytest.raises(InputError):
        IntensitySeries(np.r_[np.ones(20), 0.0], 5000.0)
    with pytest.raises(InputError):
        IntensitySeries(np.r_[np.ones(20), np.nan], 5000.0)
    with pytest.raises(InputError):
        IntensitySeries(np.ones(20), 0.0)
    s = IntensitySeries(np.ones(20), 5000, {"scenario": 1})
    assert s.metadata == {"scenario": "1"}
    with pytest.raises(ValueError):
        s.samples[0] = 2.0


# -- normalize_series -----------------------------------------------------

def test_normalize_constant_series():
    out = normalize_series([2.5, 2.5, 2.5])
    assert out.samples.tolist() == [1.0, 1.0, 1.0]
    assert out.source_mean == 2.5


def test_normalize_two_points():
    out = normalize_series([1.0, 3.0])
    assert out.samples.tolist() == [0.5, 1.5]
    assert out.source_mean == 2.0


@pytest.mark.parametrize("family", list(Family), ids=lambda f: f.value)
def test_normalized_mean_is_one(family):
    model = from_scintillation_index(family, 1.5) if family is Family.K_DIST else \
        normalize(family, {n: 2.0 for n in FREE_PARAMETERS[family]})
    raw = 37.0 * draws(model, 1)
    out = normalize_series(IntensitySeries(raw, 5000.0))
    assert out.sampling_rate == 5000.0
    assert abs(math.fsum(out.samples) / len(out) - 1.0) <= 1e-12


def test_normalize_rejects_degenerate_mean():
    with pytest.raises(DegenerateError):
        normalize_series([0.0, 0.0])
    with pytest.raises(DegenerateError):
        normalize_series([1.0, math.inf])


# -- scintillation index --------------------------------------------------

def test_scintillation_index_hand_values():
    assert estimate_scintillation_index([3.0, 3.0, 3.0]) == 0.0
    assert estimate_scintillation_index([0.5, 1.5]) == 0.25


def test_scintillation_index_of_gamma_table_row():
    model = normalize(Family.GAMMA, k=13.333)
    x = draws(model, 3)
    # for Gamma draws the plug-in index has standard error about
    # sigma2 * sqrt(2 (1 + 3 sigma2) / n) to first order
    s2 = model.scintillation_index()
    se = s2 * math.sqrt(2 * (1 + 3 * s2) / x.size)
    assert abs(estimate_scintillation_index(x) - 0.0750) <= 3 * se


@pytest.mark.parametrize("seed", range(5))
def test_scintillation_index_scale_invariant(seed):
    x = draws(normalize(Family.WEIBULL, beta=1.3), seed, 4096)
    assert estimate_scintillation_index(7.3 * x) == estimate_scintillation_index(x)
    assert estimate_scintillation_index(0.25 * x) == estimate_scintillation_index(x)


def test_scintillation_index_errors():
    with pytest.raises(InputError):
        estimate_scintillation_index([1.0])
    with pytest.raises(DegenerateError):
        estimate_scintillation_index([1.0, -1.0])


# -- histogram ------------------------------------------------------------

def test_histogram_two_points_two_bins():
    hist = build_histogram(normalize_series([0.5, 1.5]), FitConfig(bin_rule=2))
    assert hist.masses.tolist() == [0.5, 0.5]
    assert hist.edges.tolist() == [0.5, 1.0, 1.5]
    assert hist.sample_count == 2


def test_histogram_uniform_fixed_count():
    x = np.random.default_rng(0).uniform(0.0, 1.0, 10**6)
    hist = build_histogram(x, FitConfig(bin_rule=10))
    assert hist.bin_count == 10
    # binomial standard error is 3e-4; 0.002 is well outside sampling noise
    assert np.all(np.abs(hist.masses - 0.1) <= 0.002)


@given(st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=2, max_size=300),
       st.sampled_from(["freedman_diaconis", "sturges", 1, 7, 64]))
def test_histogram_partition_properties(values, rule):
    x = np.array(values)
    hist = build_histogram(x, FitConfig(bin_rule=rule))
    assert abs(hist.masses.sum() - 1.0) <= 1e-12
    assert np.all(hist.masses >= 0)
    assert np.all(np.diff(hist.edges) > 0)
    assert hist.edges[0] <= x.min() and hist.edges[-1] >= x.max()
    # empty tails are trimmed
    assert hist.masses[0] > 0 and hist.masses[-1] > 0


def test_histogram_rule_names():
    x = draws(normalize(Family.GAMMA, k=5.0), 4, 1000)
    assert build_histogram(x).rule == "freedman_diaconis"
    assert build_histogram(x, FitConfig(bin_rule="sturges")).bin_count <= 11
    assert build_histogram(x, FitConfig(bin_rule=5)).rule == "fixed"


@pytest.mark.parametrize("text, expected", [("fd", "freedman_diaconis"), ("Sturges", "sturges"),
                                            ("40", 40), (12, 12)])
def test_parse_bin_rule(text, expected):
    assert parse_bin_rule(text) == expected


@pytest.mark.parametrize("bad", ["scott", "0", 0, -3, "many"])
def test_parse_bin_rule_rejects(bad):
    with pytest.raises(InputError):
        parse_bin_rule(bad)


def test_fit_config_validation():
    with pytest.raises(InputError):
        FitConfig(grid_points_per_dim=0)
    with pytest.raises(InputError):
        FitConfig(refine_tolerance=0.0)


# -- goodness of fit ------------------------------------------------------

def test_gof_perfect_prediction_is_one():
    model = normalize(Family.GAMMA, k=3.0)
    edges = np.array([0.0, 0.4, 0.9, 1.3, 2.0, 1e300])
    masses = np.diff(model.cdf(edges))
    assert goodness_of_fit(Histogram(edges, masses, 100), model) == pytest.approx(1.0, abs=1e-15)


def test_gof_mean_prediction_is_zero():
    model = normalize(Family.GAMMA, k=3.0)
    edges = np.r_[0.0, model.inverse_cdf(np.array([0.25, 0.5, 0.75])), 1e300]
    masses = np.array([0.1, 0.4, 0.2, 0.3])
    assert goodness_of_fit(Histogram(edges, masses, 100), model) == pytest.approx(0.0, abs=1e-12)


def test_gof_true_lognormal_model():
    model = from_scintillation_index(Family.LOGNORMAL, 0.1)
    hist = build_histogram(normalize_series(draws(model, 5)))
    assert goodness_of_fit(hist, model) >= 0.95


@given(st.integers(min_value=0, max_value=10**6))
def test_gof_never_exceeds_one(seed):
    model = normalize(Family.WEIBULL, beta=2.0)
    x = draws(model, seed, 500)
    other = normalize(Family.GAMMA, k=float(1 + seed % 17))
    hist = build_histogram(x)
    assert goodness_of_fit(hist, model) <= 1.0
    assert goodness_of_fit(hist, other) <= 1.0


def test_gof_flat_histogram_sentinel():
    model = normalize(Family.GAMMA, k=3.0)
    hist = Histogram(np.array([0.5, 1.0, 1.5]), np.array([0.5, 0.5]), 2)
    assert goodness_of_fit(hist, model) == -math.inf


def test_gof_single_bin_is_degenerate():
    hist = build_histogram(np.full(32, 1.0))
    with pytest.raises(DegenerateError):
        goodness_of_fit(hist, normalize(Family.GAMMA, k=3.0))


# -- fit ------------------------------------------------------------------

def test_fit_recovers_gamma_shape():
    x = draws(normalize(Family.GAMMA, k=4.0), 6)
    result = fit(normalize_series(x), Family.GAMMA)
    assert result.model.params.k == pytest.approx(4.0, rel=0.1)
    assert result.gof >= 0.98
    assert result.regime_flag is RegimeFlag.OK
    assert result.model.normalized
    assert result.implied_sigma2_I == result.model.scintillation_index()
    assert result.empirical_sigma2_I == estimate_scintillation_index(normalize_series(x))


def test_fit_constant_series_is_degenerate():
    with pytest.raises(DegenerateError):
        fit(normalize_series(np.full(64, 3.0)), Family.LOGNORMAL)


def test_fit_k_distribution_below_unit_index_is_flagged():
    x = draws(normalize(Family.GAMMA_GAMMA, alpha=1.85, beta=10.0), 7)
    series = normalize_series(x)
    assert estimate_scintillation_index(series) < 1.0
    result = fit(series, Family.K_DIST)
    assert result.regime_flag is RegimeFlag.INAPPLICABLE_REGIME
    assert result.model is not None


def test_fit_gamma_gamma_at_tiny_index_hits_cap():
    x = draws(from_scintillation_index(Family.LOGNORMAL, 3.65e-5), 8)
    result = fit(normalize_series(x), Family.GAMMA_GAMMA)
    assert result.regime_flag is RegimeFlag.PARAMETER_CAP_HIT


def test_fit_is_deterministic():
    series = normalize_series(draws(normalize(Family.EXP_WEIBULL, alpha=2.0, beta=1.5), 9))
    a = fit(series, Family.EXP_WEIBULL)
    b = fit(series, Family.EXP_WEIBULL)
    assert a.model == b.model and a.gof == b.gof


# -- fit_all --------------------------------------------------------------

def test_fit_all_weak_turbulence_ranking():
    series = normalize_series(draws(from_scintillation_index(Family.LOGNORMAL, 0.005), 10))
    results = fit_all(series)
    assert len(results) == 7
    order = [r.family for r in results]
    k_entry = next(r for r in results if r.family is Family.K_DIST)
    assert k_entry.regime_flag is RegimeFlag.INAPPLICABLE_REGIME
    assert order.index(Family.GEN_GAMMA) < order.index(Family.K_DIST)
    assert order.index(Family.WEIBULL) < order.index(Family.K_DIST)


def test_fit_all_exp_weibull_nests_weibull():
    series = normalize_series(draws(normalize(Family.EXP_WEIBULL, alpha=3.0, beta=1.2), 11))
    results = {r.family: r for r in fit_all(series, [Family.EXP_WEIBULL, Family.WEIBULL])}
    assert results[Family.EXP_WEIBULL].gof >= results[Family.WEIBULL].gof - 1e-3


@pytest.mark.parametrize("seed, source", [(12, Family.GAMMA), (13, Family.WEIBULL), (14, Family.LOGNORMAL)])
def test_gen_gamma_nests_gamma_and_weibull(seed, source):
    model = from_scintillation_index(source, 0.3)
    results = {r.family: r for r in fit_all(normalize_series(draws(model, seed)),
                                             [Family.GEN_GAMMA, Family.GAMMA, Family.WEIBULL])}
    best_simple = max(results[Family.GAMMA].gof, results[Family.WEIBULL].gof)
    assert results[Family.GEN_GAMMA].gof >= best_simple - 1e-3


def test_fit_all_three_families_sorted():
    series = normalize_series(draws(normalize(Family.GAMMA, k=4.0), 15))
    results = fit_all(series, ["gamma", "weibull", "lognormal"])
    assert len(results) == 3
    assert {r.family for r in results} == {Family.GAMMA, Family.WEIBULL, Family.LOGNORMAL}
    gofs = [r.gof for r in results]
    assert gofs == sorted(gofs, reverse=True)


def test_fit_all_threads_do_not_change_results():
    series = normalize_series(draws(normalize(Family.GAMMA, k=4.0), 16))
    families = [Family.GAMMA, Family.WEIBULL, Family.LOGNORMAL, Family.GEN_GAMMA]
    serial = fit_all(series, families)
    threaded = fit_all(series, families, threads=4)
    assert [(r.family, r.model, r.gof) for r in serial] == [(r.family, r.model, r.gof) for r in threaded]


def test_fit_all_tie_break_prefers_fewer_parameters():
    # on a two-bin histogram the data carry too little shape information for
    # the optimiser to separate families; many reach R^2 = 1 exactly
    series = normalize_series(np.r_[np.full(20, 0.5), np.full(20, 1.5)])
    results = fit_all(series, families=list(Family), config=FitConfig(bin_rule=2))
    for a, b in zip(results, results[1:]):
        if a.gof == b.gof:
            assert (a.n_free, a.family.order) < (b.n_free, b.family.order)


def test_fit_all_rejects_empty_family_set():
    with pytest.raises(InputError):
        fit_all(normalize_series(draws(normalize(Family.GAMMA, k=4.0), 17, 100)), [])


def test_rank_key_orders_ties_by_parameter_count_then_family():
    from uwoc_fading.estimation import FitResult, rank_key
    entries = [FitResult(f, None, 0.9, 0.1, 0.1, RegimeFlag.OK)
               for f in (Family.GEN_GAMMA, Family.WEIBULL, Family.GAMMA, Family.EXP_WEIBULL)]
    entries.append(FitResult(Family.LOGNORMAL, None, math.nan, math.nan, 0.1, RegimeFlag.NUMERIC_FAILURE))
    entries.append(FitResult(Family.K_DIST, None, 0.95, 0.1, 0.1, RegimeFlag.OK))
    ranked = [r.family for r in sorted(entries, key=rank_key)]
    assert ranked == [Family.K_DIST, Family.GAMMA, Family.WEIBULL, Family.EXP_WEIBULL,
                      Family.GEN_GAMMA, Family.LOGNORMAL]
