"""Weights, IPW/Hajek estimators, variance devices, and distance bands."""

import math

import numpy as np
import pytest

from geocausal.effects import (
    SmoothedOutcomes,
    WeightSeries,
    compute_weight_series,
    compute_weights,
    effect_by_distance_band,
    effect_surface,
    estimate_ate,
    expected_events,
    hajek_variance,
    per_period_contrasts,
    variance_bound,
)
from geocausal.geometry import Raster, Region, SpatialWindow, build_grid, integrate_raster, normalize_raster
from geocausal.interventions import InterventionPair, TreatmentIntervention, intensified
from geocausal.patterns import (
    MarkedPointPattern,
    PatternSeries,
    PointPattern,
    SmoothingSpec,
)
from geocausal.propensity import fit_poisson_intensity
from geocausal.simulate import simulate_series
from geocausal.validation import default_dgp, interior_region


@pytest.fixture(scope="module")
def fitted_world():
    dgp = default_dgp(treatment_rate=0.3)
    series = simulate_series(dgp, 400, 77)
    fit = fit_poisson_intensity(series, dgp.covariates.keys())
    baseline = normalize_raster(dgp.treatment_intensity())
    return dgp, series, fit, baseline


def test_weight_identity_intervention_equals_propensity(fitted_world):
    dgp, series, fit, _ = fitted_world
    lam = fit.intensity(series, 1)
    iv = TreatmentIntervention(intensity=lam, expected_count=integrate_raster(lam))
    ws = compute_weight_series(series, fit, iv, 3)
    assert np.max(np.abs(ws.weights - 1.0)) < 1e-12
    assert compute_weights(series, fit, iv, 3, 10) == pytest.approx(1.0, abs=1e-12)


def test_weight_hand_product():
    # two periods with per-period density ratios exactly 2 and 0.5
    window = SpatialWindow(bounds=(0.0, 0.0, 1.0, 1.0))
    grid = build_grid(window, 2, 1)
    c0, c1 = grid.cell_centers()

    def one_point_series(points):
        treatments, outcomes = [], []
        for t, pt in enumerate(points, start=1):
            treatments.append(MarkedPointPattern(
                base=PointPattern(time=t, points=pt.reshape(1, 2), window=window),
                marks=("none",)))
            outcomes.append(PointPattern(time=t, points=np.zeros((0, 2)),
                                         window=window))
        return PatternSeries(grid, treatments, outcomes)

    series = one_point_series([c0, c1])

    class FixedPropensity:
        def __init__(self, raster):
            self.raster = raster

        def log_density(self, series, t):
            from geocausal.propensity import log_pattern_density

            return log_pattern_density(self.raster, series.treatment(t).base)

    # propensity: intensity (1, 3); intervention: (2, 1.5): same total mass 2,
    # cell ratios are 2 at cell 0 and 0.5 at cell 1
    prop = FixedPropensity(Raster(grid, np.array([[1.0, 3.0]])))
    iv = TreatmentIntervention(intensity=Raster(grid, np.array([[2.0, 1.5]])),
                               expected_count=1.75)
    w = compute_weights(series, prop, iv, 2, 2)
    # log w = [log 2 - (1.75 - 2)] + [log 0.5 - (1.75 - 2)] = 0.5
    assert w == pytest.approx(math.exp(0.5), rel=1e-12)


def test_weight_log_vs_direct_product(fitted_world):
    dgp, series, fit, baseline = fitted_world
    iv = intensified(baseline, 0.2)
    L = 3
    ws = compute_weight_series(series, fit, iv, L)
    from geocausal.effects import _period_log_ratio

    for t in (3, 50, 200):
        direct = 1.0
        for off, tt in enumerate(range(t - L + 1, t + 1)):
            direct *= math.exp(_period_log_ratio(series, fit, iv, tt, off))
        assert ws.weights[t - L] == pytest.approx(direct, rel=1e-12)


def test_expected_events_modes(fitted_world):
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    region = Region.whole_window(series.grid)
    L = 2
    n = series.T - L + 1
    ones = WeightSeries(L=L, log_weights=np.zeros(n), weights=np.ones(n))
    ipw = expected_events(series, ones, spec, region, L, mode="ipw")
    hajek = expected_events(series, ones, spec, region, L, mode="hajek")
    assert ipw == pytest.approx(hajek, rel=1e-12)

    doubled = WeightSeries(L=L, log_weights=np.full(n, math.log(2.0)),
                           weights=np.full(n, 2.0))
    assert expected_events(series, doubled, spec, region, L, mode="ipw") == (
        pytest.approx(2 * ipw, rel=1e-12))
    assert expected_events(series, doubled, spec, region, L, mode="hajek") == (
        pytest.approx(hajek, rel=1e-12))

    zero = WeightSeries(L=L, log_weights=np.zeros(n), weights=np.zeros(n))
    with pytest.raises(ValueError):
        expected_events(series, zero, spec, region, L, mode="hajek")


def test_unit_weights_recover_mean_count():
    # kernel-mass oracle: with unit weights and interior events the estimate
    # matches the mean outcome count per period to 1e-3 relative
    window = SpatialWindow(bounds=(0.0, 0.0, 10.0, 10.0))
    grid = build_grid(window, 64, 64)
    rng = np.random.default_rng(21)
    treatments, outcomes = [], []
    T = 40
    for t in range(1, T + 1):
        pts = rng.uniform(3.0, 7.0, size=(rng.poisson(4.0), 2))
        treatments.append(MarkedPointPattern(
            base=PointPattern(time=t, points=np.zeros((0, 2)), window=window),
            marks=()))
        outcomes.append(PointPattern(time=t, points=pts, window=window))
    series = PatternSeries(grid, treatments, outcomes)
    spec = SmoothingSpec(bandwidth=0.35)
    region = Region.whole_window(grid)
    ones = WeightSeries(L=1, log_weights=np.zeros(T), weights=np.ones(T))
    est = expected_events(series, ones, spec, region, 1, mode="ipw")
    counts = np.mean([len(p) for p in outcomes])
    assert est == pytest.approx(counts, rel=1e-3)


def test_estimate_ate_trivials(fitted_world):
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    region = interior_region(series.grid)
    ivA = InterventionPair(intensified(baseline, 0.5), L=3)
    ivB = InterventionPair(intensified(baseline, 0.2), L=3)

    same = estimate_ate(series, fit, ivA, ivA, spec, region)
    assert same.ipw == 0.0 and same.hajek == 0.0
    assert np.all(same.per_t == 0.0)

    ab = estimate_ate(series, fit, ivA, ivB, spec, region)
    ba = estimate_ate(series, fit, ivB, ivA, spec, region)
    assert ab.ipw == -ba.ipw and ab.hajek == -ba.hajek
    assert np.array_equal(ab.per_t, -ba.per_t)
    assert ab.ci95[0] <= ab.ci90[0] and ab.ci90[1] <= ab.ci95[1]
    assert ab.sigma2_star >= 0.0 and ab.hajek_variance >= 0.0
    assert 0 < ab.ess["A"] <= len(ab.per_t)


def test_variance_bound_trivials():
    assert variance_bound(np.full(10, 3.0)) == pytest.approx(9.0, rel=1e-12)
    assert variance_bound(np.zeros(5)) == 0.0
    with pytest.raises(ValueError):
        variance_bound(np.array([1.0]))


def test_hajek_variance_trivials():
    n = 12
    y = np.full(n, 2.5)
    w = np.ones(n)
    a = w * y
    assert hajek_variance(a, a, w, w, 2.5, 2.5) < 1e-12
    # scale equivariance: doubling outcomes quadruples the variance
    rng = np.random.default_rng(0)
    y = rng.uniform(1, 3, size=n)
    w1, w2 = rng.uniform(0.5, 2, size=n), rng.uniform(0.5, 2, size=n)
    nh1, nh2 = float(np.sum(w1 * y) / w1.sum()), float(np.sum(w2 * y) / w2.sum())
    v1 = hajek_variance(w1 * y, w2 * y, w1, w2, nh1, nh2)
    v4 = hajek_variance(w1 * 2 * y, w2 * 2 * y, w1, w2, 2 * nh1, 2 * nh2)
    assert v4 == pytest.approx(4.0 * v1, rel=1e-12)


def test_hajek_scale_invariance(fitted_world):
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    region = Region.whole_window(series.grid)
    L = 3
    ws = compute_weight_series(series, fit, intensified(baseline, 0.5).__class__(
        intensity=intensified(baseline, 0.5).intensity, expected_count=0.5), L)
    base_est = expected_events(series, ws, spec, region, L, mode="hajek")
    scaled = WeightSeries(L=L, log_weights=ws.log_weights + math.log(7.0),
                          weights=ws.weights * 7.0)
    scaled_est = expected_events(series, scaled, spec, region, L, mode="hajek")
    assert scaled_est == pytest.approx(base_est, rel=1e-12)


def test_mean_weight_law(fitted_world):
    # E[w | history] = 1 under a correctly specified fit
    dgp, series, fit, baseline = fitted_world
    iv = intensified(baseline, 0.35)
    ws = compute_weight_series(series, fit, iv, 2)
    se = np.std(ws.weights, ddof=1) / math.sqrt(len(ws))
    assert abs(np.mean(ws.weights) - 1.0) < 3 * se


def test_region_additivity_per_period(fitted_world):
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    L = 3
    wA = compute_weight_series(series, fit, intensified(baseline, 0.5), L)
    wB = compute_weight_series(series, fit, intensified(baseline, 0.2), L)
    smoothed = SmoothedOutcomes(series, spec)
    grid = series.grid
    left = Region(polygon=np.array([[0, 0], [5, 0], [5, 10], [0, 10]], dtype=float),
                  label="west")
    right = Region(polygon=np.array([[5, 0], [10, 0], [10, 10], [5, 10]], dtype=float),
                   label="east")
    whole = Region.whole_window(grid)
    tau_l = per_period_contrasts(smoothed, left, wA, wB)
    tau_r = per_period_contrasts(smoothed, right, wA, wB)
    tau = per_period_contrasts(smoothed, whole, wA, wB)
    assert np.array_equal(tau_l + tau_r, tau)  # bit-exact split


def test_truncation_reports_both(fitted_world):
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    region = Region.whole_window(series.grid)
    ivA = InterventionPair(intensified(baseline, 0.5), L=2)
    ivB = InterventionPair(intensified(baseline, 0.2), L=2)
    est = estimate_ate(series, fit, ivA, ivB, spec, region, truncation=0.95)
    assert est.truncated_variant is not None
    assert est.truncated_variant.truncated_variant is None
    payload = est.to_dict()
    assert "truncated" in payload


def test_effect_by_distance_band():
    grid = build_grid(SpatialWindow(bounds=(0.0, 0.0, 10.0, 10.0)), 20, 20)
    c = grid.cell_centers()
    surface = Raster(grid, np.exp(-np.abs(c[:, 1] - 5.0)).reshape(20, 20))
    road = [np.array([[0.0, 5.0], [10.0, 5.0]])]
    shares = effect_by_distance_band(surface, road, [1.0, 3.0, 20.0])
    assert shares[20.0] == pytest.approx(1.0, rel=1e-12)
    assert 0 < shares[1.0] < shares[3.0] <= 1.0

    flat = Raster(grid, np.zeros((20, 20)))
    with pytest.raises(ValueError):
        effect_by_distance_band(flat, road, [1.0])


def test_effect_surface_consistency(fitted_world):
    # the integral of the mean effect surface equals the mean per-period
    # contrast over the window, up to quadrature bookkeeping
    dgp, series, fit, baseline = fitted_world
    spec = SmoothingSpec(bandwidth=0.4)
    L = 3
    wA = compute_weight_series(series, fit, intensified(baseline, 0.5), L)
    wB = compute_weight_series(series, fit, intensified(baseline, 0.2), L)
    smoothed = SmoothedOutcomes(series, spec)
    surf = effect_surface(series, spec, wA, wB, smoothed=smoothed)
    total = integrate_raster(surf.mean)
    per_t = per_period_contrasts(smoothed, Region.whole_window(series.grid), wA, wB)
    assert total == pytest.approx(float(np.mean(per_t)), rel=1e-9, abs=1e-12)
