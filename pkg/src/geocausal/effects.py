"""Weights, IPW and Hajek effect estimators, variance bounds, distance bands.

The weight of period ``t`` under intervention ``F`` is the product over the
``L`` intervention periods of density ratios (intervention over propensity),
accumulated entirely in log space and exponentiated once.  Per-period effect
contributions are reduced on the shared per-cell path (pre-rounded cell
masses), so pixel-level effects from the heterogeneity module partition them
bit-exactly.

Inference uses two conservative devices: the squared-contribution bound
``sigma2_star = mean_t per_t**2`` for the IPW contrast, and the delta-method
sandwich ``J V J'`` over the per-period vector
``A_t = (w'_t y_t, w''_t y_t, w'_t, w''_t)`` for the Hajek contrast.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import OverlapViolationError
from .geometry import Raster, Region, snap_for_exact_sums
from .interventions import InterventionPair, TreatmentIntervention, log_intervention_density
from .patterns import PatternSeries, SmoothingSpec, smoothed_cell_values
from .propensity import FittedPropensity

Z90 = float(norm.ppf(0.95))
Z95 = float(norm.ppf(0.975))


@dataclass(frozen=True)
class WeightSeries:
    """Per-period weights for t in [L, T]; index 0 corresponds to t = L."""

    L: int
    log_weights: np.ndarray
    weights: np.ndarray
    truncation_quantile: float | None = None

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(lw)):
            raise ValueError("non-finite log-weight encountered")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        lw.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def ess(self) -> float:
        """Effective sample size (sum w)^2 / sum w^2."""
        s1 = float(np.sum(self.weights))
        s2 = float(np.sum(self.weights ** 2))
        return s1 * s1 / s2 if s2 > 0 else 0.0

    def truncated(self, quantile: float) -> "WeightSeries":
        """Cap weights at their empirical quantile (stability option)."""
        if not 0.0 < quantile <= 1.0:
            raise ValueError("truncation quantile must be in (0, 1]")
        cap = float(np.quantile(self.weights, quantile))
        w = np.minimum(self.weights, cap)
        return WeightSeries(L=self.L, log_weights=np.log(w), weights=w,
                            truncation_quantile=quantile)


def _period_log_ratio(series: PatternSeries, propensity: FittedPropensity,
                      iv: TreatmentIntervention, t: int, offset: int) -> float:
    pattern = series.treatment(t).base
    try:
        num = log_intervention_density(iv, pattern, offset=offset)
        den = propensity.log_density(series, t)
    except OverlapViolationError as err:
        raise OverlapViolationError("period %d: %s" % (t, err)) from err
    return num - den


def compute_weights(series: PatternSeries, propensity: FittedPropensity,
                    iv: TreatmentIntervention, L: int, t: int) -> float:
    """Weight of period t: exp of the summed log density ratios over the window."""
    if t < L:
        raise ValueError("t must be at least L")
    if L < 1 or t > series.T:
        raise ValueError("invalid (L, t) for a series of length %d" % series.T)
    log_w = 0.0
    for offset, tt in enumerate(range(t - L + 1, t + 1)):
        log_w += _period_log_ratio(series, propensity, iv, tt, offset)
    if not math.isfinite(log_w):
        raise ValueError("non-finite log-weight at t=%d" % t)
    return math.exp(log_w)


def compute_weight_series(series: PatternSeries, propensity: FittedPropensity,
                          iv: TreatmentIntervention, L: int) -> WeightSeries:
    """Weights for every t in [L, T].

    With a single shared intervention raster the per-period ratios are
    computed once and summed over each rolling window.
    """
    T = series.T
    if L < 1 or L > T:
        raise ValueError("need 1 <= L <= T")
    shared = len(iv.rasters) == 1
    if shared:
        ratios = np.array([
            _period_log_ratio(series, propensity, iv, tt, 0) for tt in range(1, T + 1)
        ])
        log_w = np.array([float(np.sum(ratios[t - L:t])) for t in range(L, T + 1)])
    else:
        log_w = np.empty(T - L + 1)
        for i, t in enumerate(range(L, T + 1)):
            log_w[i] = sum(
                _period_log_ratio(series, propensity, iv, tt, off)
                for off, tt in enumerate(range(t - L + 1, t + 1))
            )
    if not np.all(np.isfinite(log_w)):
        bad = int(np.where(~np.isfinite(log_w))[0][0]) + L
        raise ValueError("non-finite log-weight at t=%d" % bad)
    return WeightSeries(L=L, log_weights=log_w, weights=np.exp(log_w))


class SmoothedOutcomes:
    """Lazy cache of per-period pre-rounded cell-mass vectors.

    One smoothing pass per period is shared by every region integral, effect
    contrast, and pixel aggregation in the analysis.
    """

    def __init__(self, series: PatternSeries, spec: SmoothingSpec,
                 cache: dict[int, np.ndarray] | None = None):
        self.series = series
        self.spec = spec
        self._cells: dict[int, np.ndarray] = cache if cache is not None else {}

    def cell_values(self, t: int) -> np.ndarray:
        if t not in self._cells:
            self._cells[t] = smoothed_cell_values(
                self.series.outcome(t), self.spec, self.series.grid
            )
        return self._cells[t]

    def region_integrals(self, region: Region, L: int = 1) -> np.ndarray:
        """integral_B smooth(Y_t) for t in [L, T]."""
        mask = region.resolve_mask(self.series.grid).ravel()
        return np.array([
            float(np.sum(self.cell_values(t)[mask]))
            for t in range(L, self.series.T + 1)
        ])


def expected_events(series: PatternSeries, weights: WeightSeries,
                    spec: SmoothingSpec, region: Region, L: int,
                    mode: str = "hajek",
                    smoothed: SmoothedOutcomes | None = None) -> float:
    """Estimated expected outcome count in the region under the intervention."""
    if mode not in ("ipw", "hajek"):
        raise ValueError("mode must be 'ipw' or 'hajek'")
    if weights.L != L:
        raise ValueError("weight series was computed for L=%d" % weights.L)
    smoothed = smoothed or SmoothedOutcomes(series, spec)
    y = smoothed.region_integrals(region, L=L)
    w = weights.weights
    if mode == "ipw":
        return float(np.mean(w * y))
    total = float(np.sum(w))
    if total == 0.0:
        raise ValueError("Hajek estimator undefined: weights sum to zero")
    return float(np.sum(w * y) / total)


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimates, variances, and confidence intervals for one contrast.

    ``ci90``/``ci95`` belong to the Hajek estimate (the stable default);
    ``ipw_ci90``/``ipw_ci95`` come from the sigma2_star bound around the IPW
    estimate.  ``per_t`` holds the per-period IPW contrasts on the exact
    per-cell reduction path.
    """

    ipw: float
    hajek: float
    sigma2_star: float
    hajek_variance: float
    ci90: tuple[float, float]
    ci95: tuple[float, float]
    ipw_ci90: tuple[float, float]
    ipw_ci95: tuple[float, float]
    per_t: np.ndarray
    n_periods: int
    L: int
    ess: dict[str, float]
    region_label: str = "window"
    expected_counts: dict[str, float] = field(default_factory=dict)
    truncated_variant: "EffectEstimate | None" = None

    def to_dict(self) -> dict:
        out = {
            "ipw": self.ipw,
            "hajek": self.hajek,
            "sigma2_star": self.sigma2_star,
            "hajek_var": self.hajek_variance,
            "ci90": list(self.ci90),
            "ci95": list(self.ci95),
            "ipw_ci90": list(self.ipw_ci90),
            "ipw_ci95": list(self.ipw_ci95),
            "ess": self.ess,
            "L": self.L,
            "region": self.region_label,
            "n_periods": self.n_periods,
            "expected_counts": self.expected_counts,
            "per_t": [float(v) for v in self.per_t],
        }
        if self.truncated_variant is not None:
            trunc = self.truncated_variant.to_dict()
            trunc.pop("per_t", None)
            out["truncated"] = trunc
        return out


def variance_bound(per_t: np.ndarray) -> float:
    """Conservative variance bound: mean of squared per-period contributions."""
    per_t = np.asarray(per_t, dtype=float)
    if per_t.size < 2:
        raise ValueError("variance bound needs at least two periods")
    return float(np.mean(per_t ** 2))


def hajek_variance(a1: np.ndarray, a2: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                   n_hat_1: float, n_hat_2: float) -> float:
    """Sandwich variance J V J' for the Hajek contrast.

    ``a`` are the per-period IPW integrals ``w_t * y_t``; the Jacobian row is
    ``[1, -1, -Nhat', Nhat'']`` evaluated at the Hajek point estimates.
    """
    if a1.size < 2:
        raise ValueError("hajek variance needs at least two periods")
    jdot = a1 - a2 - n_hat_1 * w1 + n_hat_2 * w2
    return float(np.mean(jdot ** 2))


def _interval(center: float, var: float, n: int, z: float) -> tuple[float, float]:
    half = z * math.sqrt(max(var, 0.0) / n)
    return (center - half, center + half)


def per_period_contrasts(smoothed: SmoothedOutcomes, region: Region,
                         w1: WeightSeries, w2: WeightSeries) -> np.ndarray:
    """Per-period IPW contrasts on the exact per-cell path.

    For each t the per-cell effect contribution ``w'_t v_c - w''_t v_c`` is
    pre-rounded, so sums over any partition of the region reproduce these
    values bit-exactly (pixel additivity).
    """
    if w1.L != w2.L:
        raise ValueError("weight series disagree on L")
    series = smoothed.series
    mask = region.resolve_mask(series.grid).ravel()
    n_cells = series.grid.n_cells
    out = np.empty(len(w1))
    for i, t in enumerate(range(w1.L, series.T + 1)):
        v = smoothed.cell_values(t)
        e = snap_for_exact_sums(w1.weights[i] * v - w2.weights[i] * v, n_terms=n_cells)
        out[i] = float(np.sum(e[mask]))
    return out


def estimate_ate(series: PatternSeries, propensity: FittedPropensity,
                 ivA: InterventionPair, ivB: InterventionPair,
                 spec: SmoothingSpec, region: Region, L: int | None = None,
                 smoothed: SmoothedOutcomes | None = None,
                 weightsA: WeightSeries | None = None,
                 weightsB: WeightSeries | None = None,
                 truncation: float | None = None) -> EffectEstimate:
    """ATE of intervention A versus B over the region: tau = N(A) - N(B)."""
    L = L if L is not None else ivA.L
    if ivA.L != ivB.L:
        raise ValueError("interventions must share the same L")
    if L != ivA.L:
        raise ValueError("L disagrees with the intervention pair")
    smoothed = smoothed or SmoothedOutcomes(series, spec)
    wA = weightsA or compute_weight_series(series, propensity, ivA.treatment, L)
    wB = weightsB if weightsB is not None else (
        wA if ivB.treatment is ivA.treatment
        else compute_weight_series(series, propensity, ivB.treatment, L)
    )
    estimate = _estimate_from_weights(smoothed, region, wA, wB, L)
    if truncation is not None:
        trunc = _estimate_from_weights(
            smoothed, region, wA.truncated(truncation), wB.truncated(truncation), L
        )
        estimate = _with_truncated(estimate, trunc)
    return estimate


def _estimate_from_weights(smoothed: SmoothedOutcomes, region: Region,
                           wA: WeightSeries, wB: WeightSeries, L: int) -> EffectEstimate:
    series = smoothed.series
    y = smoothed.region_integrals(region, L=L)
    n = y.size
    a1, a2 = wA.weights * y, wB.weights * y
    ipw_1, ipw_2 = float(np.mean(a1)), float(np.mean(a2))
    ipw = ipw_1 - ipw_2
    sumA, sumB = float(np.sum(wA.weights)), float(np.sum(wB.weights))
    if sumA == 0.0 or sumB == 0.0:
        raise ValueError("Hajek estimator undefined: weights sum to zero")
    hajek_1, hajek_2 = float(np.sum(a1) / sumA), float(np.sum(a2) / sumB)
    hajek = hajek_1 - hajek_2

    per_t = per_period_contrasts(smoothed, region, wA, wB)
    s2 = variance_bound(per_t)
    try:
        hv = hajek_variance(a1, a2, wA.weights, wB.weights, hajek_1, hajek_2)
        if not math.isfinite(hv):
            raise FloatingPointError
    except (FloatingPointError, ValueError):
        warnings.warn("Hajek variance is degenerate; falling back to sigma2_star")
        hv = s2

    return EffectEstimate(
        ipw=ipw, hajek=hajek, sigma2_star=s2, hajek_variance=hv,
        ci90=_interval(hajek, hv, n, Z90), ci95=_interval(hajek, hv, n, Z95),
        ipw_ci90=_interval(ipw, s2, n, Z90), ipw_ci95=_interval(ipw, s2, n, Z95),
        per_t=per_t, n_periods=n, L=L,
        ess={"A": wA.ess, "B": wB.ess},
        region_label=region.label,
        expected_counts={"ipw_A": ipw_1, "ipw_B": ipw_2,
                         "hajek_A": hajek_1, "hajek_B": hajek_2},
    )


def _with_truncated(estimate: EffectEstimate, trunc: EffectEstimate) -> EffectEstimate:
    import dataclasses

    return dataclasses.replace(estimate, truncated_variant=trunc)


@dataclass(frozen=True)
class SurfaceEstimate:
    """Temporal-mean weighted smoothed outcome surface (optionally per period)."""

    mean: Raster
    per_t: list[Raster] | None = None


def effect_surface(series: PatternSeries, spec: SmoothingSpec,
                   wA: WeightSeries, wB: WeightSeries,
                   smoothed: SmoothedOutcomes | None = None,
                   keep_per_t: bool = False) -> SurfaceEstimate:
    """Temporal mean of the per-period weighted surface differences.

    The mean surface is a density (per km^2): per-cell masses are divided by
    the cell area after averaging.
    """
    smoothed = smoothed or SmoothedOutcomes(series, spec)
    grid = series.grid
    acc = np.zeros(grid.n_cells)
    kept = [] if keep_per_t else None
    L = wA.L
    for i, t in enumerate(range(L, series.T + 1)):
        v = smoothed.cell_values(t)
        diff = wA.weights[i] * v - wB.weights[i] * v
        acc += diff
        if keep_per_t:
            kept.append(Raster(grid, (diff / grid.cell_area).reshape(grid.ny, grid.nx)))
    mean = acc / (series.T - L + 1) / grid.cell_area
    return SurfaceEstimate(mean=Raster(grid, mean.reshape(grid.ny, grid.nx)), per_t=kept)


def effect_by_distance_band(surface: Raster, polylines, bands) -> dict[float, float]:
    """Share of the total effect within each distance band of the features.

    For each band edge ``d`` the share is the integral of the mean effect
    surface over cells within ``d`` km of the polylines, divided by the
    window total.  Requires a nonzero window total.
    """
    from .geometry import distance_map, integrate_raster

    grid = surface.grid
    total = integrate_raster(surface)
    if total == 0.0:
        raise ValueError("total effect over the window is zero; shares undefined")
    dmap = distance_map(grid, list(polylines))
    shares = {}
    for d in bands:
        mask = (dmap.values <= d) & grid.mask
        if not mask.any():
            shares[float(d)] = 0.0
            continue
        region = Region(cell_mask=mask, label="band<=%g" % d)
        shares[float(d)] = integrate_raster(surface, region) / total
    return shares
