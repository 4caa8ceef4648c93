"""Residence-segment detection and the diagnostics used to choose its radius."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import (
    DetectionParams,
    LocationTrace,
    MigrationEvent,
    ModelError,
    ResidenceSegment,
    from_day,
)


def candidate_segments(trace: LocationTrace, params: DetectionParams) -> list[ResidenceSegment]:
    """Maximal per-country runs whose consecutive in-country days differ by <= epsilon.

    Runs failing the length or proportion test are discarded here, before
    any overlap handling.
    """
    by_country: dict[str, list[int]] = defaultdict(list)
    for day, country in zip(trace.days, trace.countries):
        by_country[country].append(day)

    out = []
    for country, days in by_country.items():
        run = [days[0]]
        for day in days[1:]:
            if day - run[-1] <= params.epsilon_days:
                run.append(day)
                continue
            out.append(ResidenceSegment(country, run[0], run[-1], tuple(run)))
            run = [day]
        out.append(ResidenceSegment(country, run[0], run[-1], tuple(run)))
    valid = [s for s in out if params.accepts(s.span_days, s.observed_days)]
    return sorted(valid, key=_order)


def _order(seg: ResidenceSegment):
    return seg.start, seg.end, seg.country


def resolve_overlaps(segments: Sequence[ResidenceSegment],
                     params: DetectionParams) -> list[ResidenceSegment]:
    """Cut every pairwise overlap out of both segments and re-validate.

    All overlaps are measured on the input segments, so the result does not
    depend on processing order. Of two overlapping segments, the one that
    starts first (ties: shorter end, then country code) keeps only days
    before the overlap and the other only days after it. Boundaries snap to
    the remaining observed days; segments left empty, too short or too
    sparse are dropped.
    """
    ordered = sorted(segments, key=_order)
    lo = [s.start for s in ordered]
    hi = [s.end for s in ordered]
    for i, a in enumerate(ordered):
        for j in range(i + 1, len(ordered)):
            b = ordered[j]
            if b.start > a.end:
                break
            overlap_end = min(a.end, b.end)
            hi[i] = min(hi[i], b.start - 1)
            lo[j] = max(lo[j], overlap_end + 1)

    out = []
    for seg, new_lo, new_hi in zip(ordered, lo, hi):
        if new_lo == seg.start and new_hi == seg.end:
            out.append(seg)
            continue
        kept = tuple(d for d in seg.days if new_lo <= d <= new_hi)
        if not kept:
            continue
        trimmed = ResidenceSegment(seg.country, kept[0], kept[-1], kept)
        if params.accepts(trimmed.span_days, trimmed.observed_days):
            out.append(trimmed)
    return sorted(out, key=_order)


def detect_segments(trace: LocationTrace, params: DetectionParams) -> list[ResidenceSegment]:
    """Validated, pairwise non-overlapping residence segments sorted by start."""
    if not trace.days:
        return []
    return resolve_overlaps(candidate_segments(trace, params), params)


def detect_migrations(segments: Sequence[ResidenceSegment], params: DetectionParams,
                      user_id: str) -> list[MigrationEvent]:
    """One event per adjacent pair of segments in different countries.

    A boundary whose gap (destination start minus origin end, in days)
    exceeds the inter-segment limit yields nothing; other boundaries of the
    same user are unaffected.
    """
    events = []
    for a, b in zip(segments, segments[1:]):
        if a.country == b.country:
            continue
        if b.start - a.end > params.max_intersegment_gap_days:
            continue
        events.append(MigrationEvent(user_id, a.country, b.country, a.end, b.start))
    return events


def detect_user(trace: LocationTrace, params: DetectionParams) -> list[MigrationEvent]:
    return detect_migrations(detect_segments(trace, params), params, trace.user_id)


def _detect_chunk(args):
    traces, params = args
    return [ev for t in traces for ev in detect_user(t, params)]


def detect_all(traces: Sequence[LocationTrace], params: DetectionParams,
               workers: int = 1, chunk_size: int = 500) -> list[MigrationEvent]:
    """Events for every trace, in trace order regardless of ``workers``."""
    traces = list(traces)
    if workers <= 1 or len(traces) <= chunk_size:
        return _detect_chunk((traces, params))
    chunks = [(traces[i:i + chunk_size], params) for i in range(0, len(traces), chunk_size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_detect_chunk, chunks))
    return [ev for part in parts for ev in part]


# -- frequency-based baseline ------------------------------------------------

def frequency_migrations(trace: LocationTrace) -> list[tuple[int, int, str, str]]:
    """Changes of the modal country between adjacent calendar years.

    The modal country of a year has the most observed days; ties go to the
    country observed last in that year. Years without observations break
    the chain.
    """
    counts: dict[int, Counter] = defaultdict(Counter)
    last_seen: dict[int, dict[str, int]] = defaultdict(dict)
    for day, country in zip(trace.days, trace.countries):
        year = from_day(day).year
        counts[year][country] += 1
        last_seen[year][country] = day

    modal = {}
    for year, counter in counts.items():
        modal[year] = max(counter, key=lambda c: (counter[c], last_seen[year][c]))

    out = []
    for year in sorted(modal):
        nxt = year + 1
        if nxt in modal and modal[nxt] != modal[year]:
            out.append((year, nxt, modal[year], modal[nxt]))
    return out


# -- complexity and diagnostics ----------------------------------------------

def complexity_index(states: Sequence[str], universe_size: int) -> float:
    """Sequence complexity: sqrt of (transitions / max transitions) * (entropy / max entropy).

    Entropy uses natural logs over the empirical state distribution; the
    maximum entropy is ``log(universe_size)``. A length-1 sequence has
    complexity 0.
    """
    if universe_size < 2:
        raise ValueError("universe_size must be at least 2")
    n = len(states)
    if n == 0:
        raise ValueError("empty state sequence")
    counts = Counter(states)
    if len(counts) > universe_size:
        raise ValueError("more distinct states than the universe holds")
    if n == 1:
        return 0.0
    runs = 1 + sum(1 for a, b in zip(states, states[1:]) if a != b)
    if runs == 1:
        return 0.0
    entropy = -sum((k / n) * math.log(k / n) for k in counts.values())
    value = (runs - 1) / (n - 1) * entropy / math.log(universe_size)
    return math.sqrt(min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class DiagnosticsReport:
    n_segments: int
    share_modal_ge_90: float
    share_top2_diff_lt_20: float
    mean_complexity: float
    n_migrants_detected: int
    n_users: int = 0


@dataclass
class DiagnosticsAccumulator:
    """Additive partial sums behind a :class:`DiagnosticsReport`."""

    n_users: int = 0
    n_segments: int = 0
    n_modal_ge_90: int = 0
    n_top2_lt_20: int = 0
    complexity_sum: float = 0.0
    n_migrants: int = 0

    def merge(self, other: "DiagnosticsAccumulator") -> "DiagnosticsAccumulator":
        return DiagnosticsAccumulator(
            self.n_users + other.n_users,
            self.n_segments + other.n_segments,
            self.n_modal_ge_90 + other.n_modal_ge_90,
            self.n_top2_lt_20 + other.n_top2_lt_20,
            self.complexity_sum + other.complexity_sum,
            self.n_migrants + other.n_migrants,
        )

    def report(self) -> DiagnosticsReport:
        n = self.n_segments
        return DiagnosticsReport(
            n_segments=n,
            share_modal_ge_90=self.n_modal_ge_90 / n if n else 0.0,
            share_top2_diff_lt_20=self.n_top2_lt_20 / n if n else 0.0,
            mean_complexity=self.complexity_sum / n if n else 0.0,
            n_migrants_detected=self.n_migrants,
            n_users=self.n_users,
        )


def segment_states(trace: LocationTrace, seg: ResidenceSegment) -> list[str]:
    """Observed countries of the trace on days inside the segment span."""
    return [c for d, c in zip(trace.days, trace.countries) if seg.start <= d <= seg.end]


def accumulate_diagnostics(trace: LocationTrace, params: DetectionParams,
                           universe_size: int) -> DiagnosticsAccumulator:
    acc = DiagnosticsAccumulator(n_users=1)
    segments = detect_segments(trace, params)
    for seg in segments:
        states = segment_states(trace, seg)
        top = Counter(states).most_common(2)
        top1 = top[0][1]
        top2 = top[1][1] if len(top) > 1 else 0
        acc.n_segments += 1
        n = len(states)
        acc.n_modal_ge_90 += top1 >= 0.9 * n
        acc.n_top2_lt_20 += (top1 - top2) < 0.2 * n
        acc.complexity_sum += complexity_index(states, universe_size)
    if detect_migrations(segments, params, trace.user_id):
        acc.n_migrants += 1
    return acc


def segment_diagnostics(traces: Iterable[LocationTrace], params: DetectionParams,
                        universe_size: int) -> DiagnosticsReport:
    """Modal-dominance shares, mean in-segment complexity and migrant count."""
    total = DiagnosticsAccumulator()
    seen = False
    for trace in traces:
        seen = True
        if trace.days:
            total = total.merge(accumulate_diagnostics(trace, params, universe_size))
    if not seen:
        raise ModelError("segment_diagnostics needs at least one trace")
    return total.report()


def epsilon_sweep(traces: Sequence[LocationTrace], base: DetectionParams,
                  epsilons: Iterable[int], universe_size: int) -> dict[int, DiagnosticsReport]:
    out = {}
    for eps in epsilons:
        params = DetectionParams(eps, base.min_days, base.prop_days,
                                 base.max_intersegment_gap_days)
        out[eps] = segment_diagnostics(traces, params, universe_size)
    return out
