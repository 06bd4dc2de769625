"""Counterfactual stochastic interventions and sampling from them.

A treatment intervention is a Poisson process over the window: a nonnegative
intensity raster whose integral is the expected daily event count.  Two
standard constructions are provided: *intensification* (scale a normalized
baseline density by a target count, leaving the spatial distribution alone)
and *location shift* (reweight the baseline by a normalized product of
component densities raised to precision exponents).  Mediator interventions
multiply the odds of one mark category by a factor delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OverlapViolationError
from .geometry import Raster, RasterGrid, integrate_raster, normalize_raster
from .patterns import PointPattern
from .propensity import log_pattern_density


@dataclass(frozen=True)
class TreatmentIntervention:
    """Poisson intervention: per-period intensity raster(s) over the window.

    ``intensity`` is one raster shared by all periods in the intervention
    window, or a list with one raster per period.
    """

    intensity: Raster | list[Raster]
    expected_count: float
    integrals: tuple[float, ...] = None

    def __post_init__(self):
        rasters = self.rasters
        for r in rasters:
            if np.any(r.values < 0):
                raise ValueError("intervention intensity must be nonnegative")
        totals = tuple(integrate_raster(r) for r in rasters)
        for total in totals:
            if not math.isclose(total, self.expected_count, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(
                    "intensity integrates to %g but expected_count is %g"
                    % (total, self.expected_count)
                )
        if not self.expected_count >= 0:
            raise ValueError("expected_count must be nonnegative")
        object.__setattr__(self, "integrals", totals)

    @property
    def rasters(self) -> list[Raster]:
        return list(self.intensity) if isinstance(self.intensity, list) else [self.intensity]

    def raster_for_offset(self, offset: int) -> Raster:
        """Intensity for the ``offset``-th period of the window (0-based)."""
        rasters = self.rasters
        return rasters[offset % len(rasters)] if len(rasters) > 1 else rasters[0]

    @property
    def grid(self) -> RasterGrid:
        return self.rasters[0].grid


@dataclass(frozen=True)
class PowerDensitySpec:
    """Component densities and precision exponents for a power density."""

    components: list[Raster]
    exponents: list[float]

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("power density needs at least one component")
        if len(self.components) != len(self.exponents):
            raise ValueError("one exponent per component density")
        for d in self.components:
            if np.any(d.values < 0):
                raise ValueError("component densities must be nonnegative")


@dataclass(frozen=True)
class MediatorIntervention:
    """Incremental odds shift of one mark category by a factor delta."""

    delta: float
    target_mark: str

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class InterventionPair:
    """F = (F_W, F_M|w): treatment intensity plus an optional mediator shift."""

    treatment: TreatmentIntervention
    mediator: MediatorIntervention | None = None
    L: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("intervention length L must be at least 1")


def intensified(baseline: Raster, count: float) -> TreatmentIntervention:
    """Scale a normalized baseline density to a target expected count."""
    if not count > 0:
        raise ValueError("target count must be positive")
    total = integrate_raster(baseline)
    if not math.isclose(total, 1.0, rel_tol=1e-6, abs_tol=1e-9):
        raise ValueError("baseline density must integrate to one (got %g)" % total)
    return TreatmentIntervention(intensity=Raster(baseline.grid, count * baseline.values),
                                 expected_count=count)


def power_density(spec: PowerDensitySpec, grid: RasterGrid) -> Raster:
    """Normalized product of component densities raised to their exponents.

    ``d**0`` is one everywhere (a zero exponent drops the component), so with
    all exponents zero the result is the uniform density on the window.
    """
    prod = np.ones((grid.ny, grid.nx))
    for d, alpha in zip(spec.components, spec.exponents):
        if not d.grid.same_geometry(grid):
            raise ValueError("component density grid does not match")
        if alpha == 0.0:
            continue
        with np.errstate(divide="ignore"):
            term = np.power(d.values, alpha)
        if np.any(np.isinf(term[grid.mask])):
            raise ValueError(
                "component density is zero where a negative exponent applies"
            )
        prod = prod * term
    raster = Raster(grid, np.where(grid.mask, prod, 0.0))
    return normalize_raster(raster)


def location_shift(baseline: Raster, power: Raster, count: float) -> TreatmentIntervention:
    """count * normalize(baseline * power): shift mass toward the power density."""
    if not baseline.grid.same_geometry(power.grid):
        raise ValueError("baseline and power density must share a grid")
    if not count > 0:
        raise ValueError("target count must be positive")
    product = Raster(baseline.grid, baseline.values * power.values)
    shifted = normalize_raster(product)
    return TreatmentIntervention(intensity=Raster(baseline.grid, count * shifted.values),
                                 expected_count=count)


def incremental_shift(p, delta):
    """Odds-multiplier map p -> delta*p / (delta*p + 1 - p).

    Identity at delta=1, strictly increasing in both arguments on (0, 1),
    fixed points at p=0 and p=1.  Accepts scalars or arrays (broadcast).
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d <= 0):
        raise ValueError("delta must be positive")
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    out = d * arr / (d * arr + 1.0 - arr)
    return float(out) if (np.isscalar(p) and np.isscalar(delta)) else out


def log_intervention_density(iv: TreatmentIntervention, pattern: PointPattern,
                             offset: int = 0) -> float:
    """Poisson log-density of a pattern under the intervention intensity.

    Same reference process (and same code path) as the propensity module, so
    ratios of the two are exact density ratios.
    """
    raster = iv.raster_for_offset(offset)
    rasters = iv.rasters
    integral = iv.integrals[offset % len(rasters)] if len(rasters) > 1 else iv.integrals[0]
    return log_pattern_density(raster, pattern, integral=integral)


def sample_pattern(iv: TreatmentIntervention, rng: np.random.Generator,
                   time: int = 1, offset: int = 0) -> PointPattern:
    """Draw one pattern: Poisson count, cells by multinomial, uniform jitter."""
    raster = iv.raster_for_offset(offset)
    grid = raster.grid
    n = int(rng.poisson(iv.expected_count))
    if n == 0:
        return PointPattern(time=time, points=np.zeros((0, 2)), window=grid.window)
    mass = (raster.values * grid.cell_area).ravel()
    total = mass.sum()
    if total <= 0:
        return PointPattern(time=time, points=np.zeros((0, 2)), window=grid.window)
    counts = rng.multinomial(n, mass / total)
    idx = np.repeat(np.arange(grid.n_cells), counts)
    rows, cols = idx // grid.nx, idx % grid.nx
    x0, y0, _, _ = grid.window.bounds
    xs = x0 + (cols + rng.uniform(size=n)) * grid.dx
    ys = y0 + (rows + rng.uniform(size=n)) * grid.dy
    return PointPattern(time=time, points=np.column_stack([xs, ys]), window=grid.window)


def sample_marks(probs: dict[str, np.ndarray], rng: np.random.Generator) -> tuple[str, ...]:
    """Draw one categorical mark per point from per-point probabilities.

    ``probs`` maps each category to an (n_points,) probability array; the
    per-point probabilities must sum to one.  Delta shifts are applied
    upstream by the mediator score model (stage-wise, so that categories
    outside the shifted stage keep their probabilities).
    """
    cats = sorted(probs)
    if not cats:
        return ()
    stacked = np.column_stack([probs[c] for c in cats])
    n = stacked.shape[0]
    if n == 0:
        return ()
    u = rng.uniform(size=n)
    cum = np.cumsum(stacked, axis=1)
    choice = np.sum(u[:, None] > cum, axis=1)
    choice = np.minimum(choice, len(cats) - 1)
    return tuple(cats[i] for i in choice)
