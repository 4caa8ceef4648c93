"""Agreement between estimated and reference flows, and the social-network link."""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

PairYear = tuple[str, str, int]

METRICS = ("levels", "log_levels", "proportion", "total_outbound", "total_inbound", "net")
METRIC_LABELS = {
    "levels": "Migrants",
    "log_levels": "Log(Migrants)",
    "proportion": "Proportion of Migrants",
    "total_outbound": "Total Outbound",
    "total_inbound": "Total Inbound",
    "net": "Net Migration",
}

MIN_INTENSITY_MIGRANTS = 20


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Product-moment correlation; None when undefined (n < 2 or a constant series)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("series differ in length")
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class ReferenceFlows:
    entries: Mapping[PairYear, float]
    source: str = "reference"

    def __post_init__(self):
        for key, v in self.entries.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"reference value for {key} must be non-negative")


@dataclass(frozen=True)
class MetricResult:
    n: int
    r: Optional[float]


@dataclass
class ValidationReport:
    metrics: dict[str, MetricResult]
    abs_error_thousands: float
    abs_error_high_hdi: float
    abs_error_low_hdi: float
    hdi_median: Optional[float]
    excluded: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for name in METRICS:
            m = self.metrics[name]
            out.append({"metric": name, "n": m.n, "value": m.r})
        out.append({"metric": "abs_error_thousands", "n": self.metrics["levels"].n,
                    "value": self.abs_error_thousands})
        out.append({"metric": "abs_error_high_hdi", "n": "", "value": self.abs_error_high_hdi})
        out.append({"metric": "abs_error_low_hdi", "n": "", "value": self.abs_error_low_hdi})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "n", "value"])
        for row in self.rows():
            v = row["value"]
            w.writerow([row["metric"], row["n"], "" if v is None else repr(float(v))])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'metric':<24}{'N':>8}{'r':>10}"]
        for name in METRICS:
            m = self.metrics[name]
            r = "n/a" if m.r is None else f"{m.r:.3f}"
            lines.append(f"{METRIC_LABELS[name]:<24}{m.n:>8}{r:>10}")
        lines.append(f"sum |error| (thousands): {self.abs_error_thousands:.3f}")
        lines.append(f"  high-HDI origins:       {self.abs_error_high_hdi:.3f}")
        lines.append(f"  low-HDI origins:        {self.abs_error_low_hdi:.3f}")
        for note in self.excluded:
            lines.append(f"excluded: {note}")
        return "\n".join(lines) + "\n"


def _metric(xs, ys) -> MetricResult:
    return MetricResult(len(xs), pearson(xs, ys) if len(xs) >= 2 else None)


def validation_report(estimate: Mapping[PairYear, float], reference: ReferenceFlows,
                      population: Mapping[tuple[str, int], float],
                      hdi: Mapping[str, float], universe: Optional[Iterable[str]] = None,
                      year: Optional[int] = None) -> ValidationReport:
    """Correlate annual estimates with reference flows over their shared pairs.

    ``estimate`` holds annualized flows keyed by (origin, destination, year);
    a pair counts as shared only when both sides have it. Country totals
    (outbound, inbound, net) are summed over shared pairs only and
    correlated per (country, year). The HDI split compares each origin's HDI
    to the median over ``universe`` (or over all countries in ``hdi``):
    strictly above is high, the rest low.
    """
    excluded: list[str] = []
    shared = sorted(k for k in estimate.keys() & reference.entries.keys()
                    if year is None or k[2] == year)
    if not shared:
        raise ValueError("estimate and reference share no country pairs")
    est = np.array([estimate[k] for k in shared], dtype=float)
    ref = np.array([reference.entries[k] for k in shared], dtype=float)

    metrics = {"levels": _metric(est, ref)}

    positive = (est > 0) & (ref > 0)
    metrics["log_levels"] = _metric(np.log(est[positive]), np.log(ref[positive]))

    px, py = [], []
    no_pop = set()
    for k, e, r in zip(shared, est, ref):
        pop = population.get((k[1], k[2]))
        if pop is None or not pop > 0:
            no_pop.add((k[1], k[2]))
            continue
        px.append(e / pop)
        py.append(r / pop)
    if no_pop:
        excluded.append(f"proportion: no population for {sorted(no_pop)}")
    metrics["proportion"] = _metric(px, py)

    out_e: dict = {}
    out_r: dict = {}
    in_e: dict = {}
    in_r: dict = {}
    for k, e, r in zip(shared, est, ref):
        o, d, y = k
        out_e[(o, y)] = out_e.get((o, y), 0.0) + e
        out_r[(o, y)] = out_r.get((o, y), 0.0) + r
        in_e[(d, y)] = in_e.get((d, y), 0.0) + e
        in_r[(d, y)] = in_r.get((d, y), 0.0) + r
    outs = sorted(out_e)
    ins = sorted(in_e)
    metrics["total_outbound"] = _metric([out_e[u] for u in outs], [out_r[u] for u in outs])
    metrics["total_inbound"] = _metric([in_e[u] for u in ins], [in_r[u] for u in ins])
    units = sorted(set(outs) | set(ins))
    net_e = [in_e.get(u, 0.0) - out_e.get(u, 0.0) for u in units]
    net_r = [in_r.get(u, 0.0) - out_r.get(u, 0.0) for u in units]
    metrics["net"] = _metric(net_e, net_r)

    err = np.abs(est - ref)
    pool = [hdi[c] for c in (universe if universe is not None else hdi) if c in hdi]
    median = statistics.median(pool) if pool else None
    high = low = 0.0
    no_hdi = set()
    for k, e in zip(shared, err):
        h = hdi.get(k[0])
        if h is None or median is None:
            no_hdi.add(k[0])
            continue
        if h > median:
            high += e
        else:
            low += e
    if no_hdi:
        excluded.append(f"HDI split: no HDI for origins {sorted(no_hdi)}")

    return ValidationReport(metrics, float(err.sum()) / 1000.0, high / 1000.0, low / 1000.0,
                            median, excluded)


def migration_intensity(flows: Mapping[PairYear, float],
                        population: Mapping[tuple[str, int], float],
                        min_migrants: float = MIN_INTENSITY_MIGRANTS
                        ) -> dict[tuple[str, str, int], float]:
    """Two-way flow over the product of populations, per unordered pair and year.

    Keys are (a, b, year) with a < b. Pairs with fewer than ``min_migrants``
    in both directions combined are dropped.
    """
    out = {}
    for (o, d, y) in flows:
        a, b = sorted((o, d))
        key = (a, b, y)
        if key in out or a == b:
            continue
        total = flows.get((a, b, y), 0.0) + flows.get((b, a, y), 0.0)
        if total < min_migrants:
            continue
        pa = population.get((a, y))
        pb = population.get((b, y))
        if not (pa and pb and pa > 0 and pb > 0):
            continue
        out[key] = total / (pa * pb)
    return out


def sci_correlation(intensity: Mapping[tuple[str, str, int], float],
                    sci: Mapping[tuple[str, str], float], year: Optional[int] = None,
                    subset: Optional[Iterable[str]] = None) -> tuple[Optional[float], int]:
    """Pearson r of log10 intensity against log10 SCI over shared positive pairs.

    Returns (r, n). ``subset`` keeps only pairs with both countries in it.
    """
    keep = set(subset) if subset is not None else None
    xs, ys = [], []
    for (a, b, y), v in sorted(intensity.items()):
        if year is not None and y != year:
            continue
        if keep is not None and not (a in keep and b in keep):
            continue
        s = sci.get((a, b), sci.get((b, a)))
        if s is None or not (s > 0 and v > 0):
            continue
        xs.append(math.log10(v))
        ys.append(math.log10(s))
    return (pearson(xs, ys) if len(xs) >= 2 else None), len(xs)
