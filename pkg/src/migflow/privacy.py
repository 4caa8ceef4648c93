"""Analytic Gaussian mechanism: sigma calibration and table release."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .model import FlowTable, month_index
from .rng import stage_key

DEFAULT_EPSILON = 10.0
DEFAULT_DELTA = 1e-9


class PrivacyError(ValueError):
    pass


def sensitivity_from_release(years: int = 10, aggregates: int = 3) -> float:
    """L2 sensitivity when one person moves each released cell by at most 1.

    One migration per year, released yearly for ``years`` years across
    ``aggregates`` tables (total, by age, by sex).
    """
    if years < 1 or aggregates < 1:
        raise PrivacyError("years and aggregates must be positive")
    return math.sqrt(years * aggregates)


DEFAULT_SENSITIVITY = sensitivity_from_release()


def dp_condition_value(eps: float, delta: float, sensitivity: float, sigma: float) -> float:
    """Privacy-loss bound minus delta; the mechanism is (eps, delta)-DP iff this is <= 0.

    Both normal CDF terms are evaluated through erfc, which keeps full
    relative accuracy deep in the lower tail.
    """
    for name, v in (("eps", eps), ("delta", delta), ("sensitivity", sensitivity),
                    ("sigma", sigma)):
        if not v > 0:
            raise PrivacyError(f"{name} must be positive, got {v!r}")
    a = sensitivity / (2.0 * sigma)
    b = eps * sigma / sensitivity
    lhs = float(ndtr(a - b)) - math.exp(eps) * float(ndtr(-a - b))
    return lhs - delta


def classical_sigma(eps: float, delta: float, sensitivity: float) -> float:
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def solve_sigma(eps: float, delta: float, sensitivity: float, rtol: float = 1e-6) -> float:
    """Smallest sigma meeting the analytic Gaussian condition, by bisection.

    The bracket opens at the classical bound (doubled until it satisfies
    the condition) and a thousandth of it.
    """
    if not (eps > 0 and 0 < delta < 1 and sensitivity > 0):
        raise PrivacyError("need eps > 0, 0 < delta < 1 and sensitivity > 0")

    def g(s):
        return dp_condition_value(eps, delta, sensitivity, s)

    hi = classical_sigma(eps, delta, sensitivity)
    for _ in range(200):
        if g(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise PrivacyError(f"no sigma up to {hi:.3g} satisfies the condition")
    lo = 1e-3 * hi
    for _ in range(200):
        if g(lo) > 0:
            break
        lo *= 1e-3
    else:
        raise PrivacyError(f"condition holds for every sigma down to {lo:.3g}")

    probe = np.linspace(lo, hi, 65)
    vals = np.array([g(s) for s in probe])
    if np.any(np.diff(vals) > 1e-15):
        raise PrivacyError(
            f"condition is not monotone on [{lo:.6g}, {hi:.6g}]: {vals.tolist()}")

    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_DELTA
    sensitivity: float = DEFAULT_SENSITIVITY
    sigma: Optional[float] = None

    def __post_init__(self):
        if not (self.epsilon > 0 and 0 < self.delta < 1 and self.sensitivity > 0):
            raise PrivacyError("need epsilon > 0, 0 < delta < 1 and sensitivity > 0")
        if self.sigma is None:
            object.__setattr__(self, "sigma",
                               solve_sigma(self.epsilon, self.delta, self.sensitivity))
        elif dp_condition_value(self.epsilon, self.delta, self.sensitivity, self.sigma) > 0:
            raise PrivacyError(f"sigma={self.sigma} does not satisfy the condition")


# -- keyed noise -------------------------------------------------------------

def _code(country: str) -> int:
    return (ord(country[0]) - 65) * 26 + (ord(country[1]) - 65)


def pair_stream_key(seed: int, origin: str, destination: str) -> list[int]:
    return [stage_key(seed, "privatize"), _code(origin) * 676 + _code(destination)]


def pair_noise(seed: int, origin: str, destination: str, first_month: int,
               n_months: int) -> np.ndarray:
    """Standard normals for consecutive months of one country pair.

    The draw for a cell is the Philox word at its absolute month index in
    the stream keyed by (seed, origin, destination), so it does not depend
    on which other cells are drawn or in what order.
    """
    block, offset = divmod(first_month, 4)
    gen = np.random.Philox(key=pair_stream_key(seed, origin, destination),
                           counter=[block, 0, 0, 0])
    words = gen.random_raw(offset + n_months)[offset:]
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def cell_noise(seed: int, keys: Sequence[tuple[str, str, int, int]]) -> np.ndarray:
    """Standard normal draw per cell key."""
    return np.array([pair_noise(seed, o, d, month_index((y, m)), 1)[0]
                     for o, d, y, m in keys])


def _privatize_pairs(table: FlowTable, pairs, sigma, seed, first, n):
    months = table.months()
    out = {}
    for o, d in pairs:
        z = pair_noise(seed, o, d, first, n) if sigma > 0 else np.zeros(n)
        for (y, m), zi in zip(months, z):
            key = (o, d, y, m)
            if key in table.missing:
                continue
            v = np.rint(table.entries.get(key, 0) + sigma * zi)
            if v > 0:
                out[key] = int(v)
    return out


def privatize(table: FlowTable, sigma: float, seed: int, workers: int = 1) -> FlowTable:
    """Add N(0, sigma^2) noise to every non-missing cell, round, censor at zero."""
    if table.stage != "weighted":
        raise PrivacyError(f"privatize expects a weighted table, got stage {table.stage!r}")
    if sigma < 0:
        raise PrivacyError("sigma must be non-negative")
    first = month_index(table.start)
    n = len(table.months())
    pairs = list(table.pairs())
    if workers <= 1:
        entries = _privatize_pairs(table, pairs, sigma, seed, first, n)
    else:
        size = max(1, -(-len(pairs) // workers))
        chunks = [pairs[i:i + size] for i in range(0, len(pairs), size)]
        entries = {}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(lambda c: _privatize_pairs(table, c, sigma, seed, first, n),
                                 chunks):
                entries.update(part)
    return table.with_values(entries, stage="privatized")
