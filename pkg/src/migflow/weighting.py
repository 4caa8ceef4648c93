"""Population weights for platform-level migration counts.

Five schemes share one shape: a positive multiplier per origin-year that
scales every flow leaving that origin in that year.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .model import FlowTable, ModelError

log = logging.getLogger(__name__)

SCHEMES = ("raw", "penetration", "raking", "coefficient", "selection")


class WeightingError(ValueError):
    pass


@dataclass(frozen=True)
class CountryYearStats:
    country: str
    year: int
    population: float
    fb_users: float
    gni_pc: Optional[float] = None

    def __post_init__(self):
        if not self.population > 0:
            raise ModelError(f"{self.country} {self.year}: population must be positive")
        if self.fb_users < 0:
            raise ModelError(f"{self.country} {self.year}: negative platform users")
        if self.fb_users > self.population:
            raise ModelError(f"{self.country} {self.year}: platform users exceed population")
        if self.gni_pc is not None and not self.gni_pc > 0:
            raise ModelError(f"{self.country}: GNI per capita must be positive")

    @property
    def penetration(self) -> float:
        return self.fb_users / self.population


StatsIndex = Mapping[tuple[str, int], CountryYearStats]


def index_stats(stats: Iterable[CountryYearStats]) -> dict[tuple[str, int], CountryYearStats]:
    out = {}
    for s in stats:
        key = (s.country, s.year)
        if key in out:
            raise ModelError(f"duplicate stats for {s.country} {s.year}")
        out[key] = s
    return out


@dataclass(frozen=True)
class WeightModel:
    scheme: str
    multipliers: Mapping[tuple[str, int], float]
    params: Mapping[str, object] = field(default_factory=dict)
    unweightable: frozenset = frozenset()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ModelError(f"unknown weighting scheme {self.scheme!r}")
        for key, w in self.multipliers.items():
            if not (math.isfinite(w) and w > 0):
                raise ModelError(f"weight for {key} must be positive and finite, got {w!r}")
        object.__setattr__(self, "multipliers", MappingProxyType(dict(self.multipliers)))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        object.__setattr__(self, "unweightable", frozenset(self.unweightable))

    def weight(self, origin: str, year: int) -> float:
        return self.multipliers[(origin, year)]


def income_index(gni_pc: Mapping[str, float]) -> dict[str, float]:
    """GNI per capita scaled so the richest country scores exactly 1."""
    if not gni_pc:
        raise WeightingError("income index needs at least one country")
    for c, v in gni_pc.items():
        if not v > 0:
            raise WeightingError(f"GNI per capita for {c} must be positive")
    top = max(gni_pc.values())
    return {c: (1.0 if v == top else v / top) for c, v in gni_pc.items()}


def raw_weights(keys: Iterable[tuple[str, int]]) -> WeightModel:
    return WeightModel("raw", {k: 1.0 for k in keys})


def penetration_weights(stats: Iterable[CountryYearStats]) -> WeightModel:
    """Population over platform users per origin-year."""
    mult, bad = {}, set()
    for s in stats:
        if s.fb_users <= 0:
            bad.add((s.country, s.year))
            continue
        mult[(s.country, s.year)] = s.population / s.fb_users
    if bad:
        log.warning("unweightable origin-years (no platform users): %s", sorted(bad))
    return WeightModel("penetration", mult, unweightable=bad)


def selection_weight(income: float, penetration: float, r: float) -> float:
    return 1.0 / (income * penetration + (1.0 - income) * r)


def selection_weights(stats: Iterable[CountryYearStats], income: Mapping[str, float],
                      r_by_year: Mapping[int, float]) -> WeightModel:
    """Inverse of an income-weighted blend of penetration and the selection rate."""
    mult, bad = {}, set()
    for s in stats:
        if s.year not in r_by_year:
            continue
        r = r_by_year[s.year]
        if not r > 0:
            raise WeightingError(f"selection rate for {s.year} must be positive")
        inc = income.get(s.country)
        if inc is None or not 0 < inc <= 1:
            bad.add((s.country, s.year))
            continue
        denom = inc * s.penetration + (1.0 - inc) * r
        if denom <= 0:
            bad.add((s.country, s.year))
            continue
        mult[(s.country, s.year)] = 1.0 / denom
    if bad:
        log.warning("origin-years without usable income or penetration: %s", sorted(bad))
    return WeightModel("selection", mult, {"r_by_year": dict(r_by_year)}, bad)


# -- selection-rate calibration ----------------------------------------------

def default_grid(lo: float = 0.0, hi: float = 3.0, step: float = 0.01) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


@dataclass(frozen=True)
class Calibration:
    r: float
    grid: np.ndarray
    errors: np.ndarray
    origins: tuple[str, ...]

    @property
    def min_error(self) -> float:
        return float(self.errors.min())


def calibrate_selection_rate(raw: Mapping[str, float], reference: Mapping[str, float],
                             stats: StatsIndex, income: Mapping[str, float], year: int,
                             grid: Optional[Sequence[float]] = None) -> Calibration:
    """Grid value of r minimising the sum over origins of |W(r) * raw - reference|.

    ``raw`` and ``reference`` are flows from each origin into the
    calibration destination in ``year``. Ties go to the smallest r.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    origins = sorted(o for o in raw.keys() & reference.keys()
                     if (o, year) in stats and o in income and stats[(o, year)].fb_users > 0)
    if not origins:
        raise WeightingError(f"no origin has raw, reference, stats and income for {year}")
    x = np.array([raw[o] for o in origins], dtype=float)
    y = np.array([reference[o] for o in origins], dtype=float)
    inc = np.array([income[o] for o in origins], dtype=float)
    pen = np.array([stats[(o, year)].penetration for o in origins], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = inc[None, :] * pen[None, :] + (1.0 - inc[None, :]) * grid[:, None]
        weighted = np.where(x[None, :] == 0, 0.0, x[None, :] / denom)
    errors = np.abs(weighted - y[None, :]).sum(axis=1)
    errors = np.where(np.isnan(errors), np.inf, errors)
    best = int(np.argmin(errors))
    return Calibration(float(grid[best]), grid, errors, tuple(origins))


def destination_year_inflows(table: FlowTable, destination: str, year: int) -> dict[str, float]:
    """Per-origin inflow into ``destination`` summed over the months of ``year``."""
    out: dict[str, float] = {}
    for y, m in table.months():
        if y != year:
            continue
        for o in table.universe:
            if o == destination:
                continue
            v = table.get((o, destination, y, m))
            if v is None:
                continue
            out[o] = out.get(o, 0) + v
    return out


# -- coefficient -------------------------------------------------------------

def fit_coefficient(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope through the origin, sum(x*y) / sum(x*x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise WeightingError("x and y differ in length")
    sxx = float(np.dot(x, x))
    if not sxx > 0:
        raise WeightingError("coefficient fit needs a nonzero raw series")
    return float(np.dot(x, y)) / sxx


def coefficient_weights(beta: float, keys: Iterable[tuple[str, int]]) -> WeightModel:
    if not beta > 0:
        raise WeightingError(f"coefficient must be positive, got {beta}")
    return WeightModel("coefficient", {k: beta for k in keys}, {"beta": beta})


# -- raking ------------------------------------------------------------------

DIMENSIONS = ("age_group", "sex", "region")


@dataclass(frozen=True)
class RakingProblem:
    """Seed counts per (age_group, sex, region) cell and target marginals per dimension."""

    cells: Mapping[tuple[str, str, str], float]
    targets: Mapping[str, Mapping[str, float]]
    tolerance: float = 1e-8
    max_iterations: int = 1000


@dataclass(frozen=True)
class RakingResult:
    weights: dict
    fitted: dict
    converged: bool
    iterations: int
    max_deviation: float


def rake(problem: RakingProblem) -> RakingResult:
    """Iterative proportional fitting of the seed table to every marginal in turn.

    Stops once the largest relative deviation between a fitted marginal and
    its target drops below the tolerance. Cell weight is fitted / seed, 0
    for empty seed cells.
    """
    for dim in DIMENSIONS:
        if dim not in problem.targets:
            raise WeightingError(f"missing target marginal for {dim}")
    totals = [sum(problem.targets[dim].values()) for dim in DIMENSIONS]
    scale = max(max(totals), 1e-300)
    if max(totals) - min(totals) > problem.tolerance * scale:
        raise WeightingError(f"inconsistent marginal totals {totals}")

    levels = []
    for axis, dim in enumerate(DIMENSIONS):
        cats = sorted(set(problem.targets[dim]) | {k[axis] for k in problem.cells})
        levels.append({c: i for i, c in enumerate(cats)})
    seed = np.zeros(tuple(len(lv) for lv in levels))
    for key, v in problem.cells.items():
        if v < 0:
            raise WeightingError(f"negative seed count in cell {key}")
        seed[tuple(levels[a][key[a]] for a in range(3))] = v
    target_vecs = []
    for axis, dim in enumerate(DIMENSIONS):
        vec = np.zeros(len(levels[axis]))
        for cat, t in problem.targets[dim].items():
            if t < 0:
                raise WeightingError(f"negative target for {dim}={cat}")
            vec[levels[axis][cat]] = t
        target_vecs.append(vec)
        margin = seed.sum(axis=tuple(a for a in range(3) if a != axis))
        uncovered = [c for c, i in levels[axis].items() if vec[i] > 0 and margin[i] == 0]
        if uncovered:
            raise WeightingError(f"targets for {dim} {uncovered} have no seed support")

    fit = seed.astype(float).copy()

    def deviation():
        worst = 0.0
        for axis, vec in enumerate(target_vecs):
            margin = fit.sum(axis=tuple(a for a in range(3) if a != axis))
            denom = np.where(vec > 0, vec, 1.0)
            worst = max(worst, float(np.max(np.abs(margin - vec) / denom)))
        return worst

    dev = deviation()
    iterations = 0
    while dev >= problem.tolerance and iterations < problem.max_iterations:
        for axis, vec in enumerate(target_vecs):
            margin = fit.sum(axis=tuple(a for a in range(3) if a != axis))
            factor = np.divide(vec, margin, out=np.zeros_like(vec), where=margin > 0)
            shape = [1, 1, 1]
            shape[axis] = -1
            fit *= factor.reshape(shape)
        iterations += 1
        dev = deviation()
    converged = dev < problem.tolerance
    if not converged:
        log.warning("raking did not converge after %d iterations (deviation %.3g)",
                    iterations, dev)

    names = [sorted(lv, key=lv.get) for lv in levels]
    weights, fitted = {}, {}
    for idx in np.ndindex(seed.shape):
        key = tuple(names[a][idx[a]] for a in range(3))
        fitted[key] = float(fit[idx])
        weights[key] = float(fit[idx] / seed[idx]) if seed[idx] > 0 else 0.0
    return RakingResult(weights, fitted, converged, iterations, dev)


def raking_weights(problems: Mapping[str, RakingProblem], years: Iterable[int],
                   composition: Optional[Mapping[str, Mapping[tuple, float]]] = None
                   ) -> WeightModel:
    """Per-origin multiplier from raked cell weights.

    The multiplier is the mean cell weight over ``composition`` (counts of
    migrating users per cell); without it the seed counts are used.
    """
    years = list(years)
    mult, bad = {}, set()
    for country, problem in problems.items():
        result = rake(problem)
        mix = (composition or {}).get(country) or problem.cells
        num = sum(result.weights.get(k, 0.0) * n for k, n in mix.items())
        den = sum(n for k, n in mix.items() if result.weights.get(k, 0.0) > 0)
        if not den > 0 or not num > 0:
            bad.update((country, y) for y in years)
            continue
        for y in years:
            mult[(country, y)] = num / den
    return WeightModel("raking", mult, unweightable=bad)


# -- application -------------------------------------------------------------

def apply_weights(table: FlowTable, model: WeightModel) -> FlowTable:
    """Multiply each cell by its origin-year weight; stage becomes ``weighted``."""
    gaps = sorted({(o, y) for (o, _, y, _) in table.entries} - model.multipliers.keys())
    if gaps:
        raise WeightingError(f"weight model does not cover origin-years {gaps}")
    entries = {k: v * model.multipliers[(k[0], k[2])] for k, v in table.entries.items()}
    return table.with_values(entries, stage="weighted")
