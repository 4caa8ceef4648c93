"""Build, clean and combine country-pair-by-month flow tables."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import (
    CellKey,
    FlowTable,
    MigrationEvent,
    ModelError,
    YearMonth,
    format_year_month,
    from_month_index,
    iter_months,
    month_index,
)

log = logging.getLogger(__name__)


class AggregationError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def build_flow_table(events: Iterable[MigrationEvent], start: YearMonth, end: YearMonth,
                     universe: Sequence[str]) -> FlowTable:
    """Integer event counts keyed by (origin, destination, year, month)."""
    members = set(universe)
    lo, hi = month_index(start), month_index(end)
    counts: Counter = Counter()
    for i, ev in enumerate(events):
        y, m = ev.event_year_month
        if not lo <= month_index((y, m)) <= hi:
            raise AggregationError(
                f"event #{i} (user {ev.user_id}, {ev.origin}->{ev.destination}) dated "
                f"{format_year_month((y, m))} is outside "
                f"{format_year_month(start)}..{format_year_month(end)}")
        for c in (ev.origin, ev.destination):
            if c not in members:
                raise AggregationError(
                    f"event #{i} (user {ev.user_id}) involves {c!r}, outside the universe")
        counts[(ev.origin, ev.destination, y, m)] += 1
    return FlowTable(dict(counts), "raw", tuple(universe), start, end)


@dataclass(frozen=True)
class Exclusion:
    origin: str
    destination: str
    start: YearMonth
    end: YearMonth

    def __post_init__(self):
        if month_index(self.end) < month_index(self.start):
            raise ConfigError(
                f"exclusion {self.origin}->{self.destination}: interval "
                f"{format_year_month(self.start)}..{format_year_month(self.end)} is reversed")
        if self.origin == self.destination:
            raise ConfigError(f"exclusion {self.origin}->{self.destination}: same country")

    def cells(self) -> list[CellKey]:
        return [(self.origin, self.destination, y, m) for y, m in iter_months(self.start, self.end)]


def apply_exclusions(table: FlowTable,
                     exclusions: Iterable[Exclusion]) -> tuple[FlowTable, list[CellKey]]:
    """Mark listed cells missing. Returns the new table and the cells removed."""
    entries = dict(table.entries)
    missing = set(table.missing)
    removed = []
    for exc in exclusions:
        for key in exc.cells():
            if not table.contains_cell(key):
                log.info("exclusion cell %s not in table, skipped", key)
                continue
            if key in missing:
                continue
            entries.pop(key, None)
            missing.add(key)
            removed.append(key)
    log.info("excluded %d cells", len(removed))
    return table.with_values(entries, missing=missing), removed


def impute_months(table: FlowTable,
                  affected: Iterable[YearMonth]) -> tuple[FlowTable, list[CellKey]]:
    """Replace each affected month by the mean of the two neighbouring months.

    Cells whose neighbour is missing or outside the table become missing and
    are returned as unresolved.
    """
    entries = dict(table.entries)
    missing = set(table.missing)
    unresolved = []
    for ym in affected:
        idx = month_index(tuple(ym))
        y, m = from_month_index(idx)
        if not month_index(table.start) <= idx <= month_index(table.end):
            raise ConfigError(f"imputation month {format_year_month((y, m))} outside the table")
        py, pm = from_month_index(idx - 1)
        ny, nm = from_month_index(idx + 1)
        for o, d in table.pairs():
            key = (o, d, y, m)
            before = (o, d, py, pm)
            after = (o, d, ny, nm)
            if not (table.contains_cell(before) and table.contains_cell(after)) \
                    or before in table.missing or after in table.missing:
                entries.pop(key, None)
                missing.add(key)
                unresolved.append(key)
                continue
            value = (table.entries.get(before, 0) + table.entries.get(after, 0)) / 2
            missing.discard(key)
            entries[key] = value
    if unresolved:
        log.warning("%d cells could not be imputed", len(unresolved))
    return table.with_values(entries, missing=missing), unresolved


def merge_partials(tables: Sequence[FlowTable]) -> FlowTable:
    """Cell-wise sum of tables sharing stage, universe and month range.

    A cell missing in one table and valued in another takes the value; it
    stays missing only when no table gives it a nonzero value.
    """
    tables = list(tables)
    if not tables:
        raise AggregationError("nothing to merge")
    first = tables[0]
    for t in tables[1:]:
        if not t.same_frame(first):
            raise AggregationError("cannot merge tables with different stage, universe or range")
    entries: dict = {}
    missing: set = set()
    for t in tables:
        for key, value in t.entries.items():
            entries[key] = entries.get(key, 0) + value
        missing |= t.missing
    rescued = missing & entries.keys()
    if rescued:
        log.warning("%d missing cells received values from other partials", len(rescued))
    return first.with_values(entries, missing=missing - rescued)


def annualize(table: FlowTable) -> dict[tuple[str, str, int], float]:
    """Yearly sums per pair; a pair-year with any missing month is left out."""
    years: dict[int, list[int]] = {}
    for y, m in table.months():
        years.setdefault(y, []).append(m)
    out = {}
    for o, d in table.pairs():
        for y, months in years.items():
            total = 0
            for m in months:
                v = table.get((o, d, y, m))
                if v is None:
                    break
                total += v
            else:
                out[(o, d, y)] = total
    return out


def restrict_universe(table: FlowTable, countries: Iterable[str]) -> FlowTable:
    keep = [c for c in table.universe if c in set(countries)]
    if len(keep) < 2:
        raise ModelError("restricted universe needs at least two countries")
    ks = set(keep)
    entries = {k: v for k, v in table.entries.items() if k[0] in ks and k[1] in ks}
    missing = {k for k in table.missing if k[0] in ks and k[1] in ks}
    return FlowTable(entries, table.stage, tuple(keep), table.start, table.end, frozenset(missing))


def events_in_range(events: Iterable[MigrationEvent], start: YearMonth, end: YearMonth,
                    universe: Sequence[str]) -> tuple[list[MigrationEvent], int]:
    """Split off events dated outside ``start..end`` or touching foreign countries."""
    lo, hi = month_index(start), month_index(end)
    members = set(universe)
    kept, dropped = [], 0
    for ev in events:
        if (lo <= month_index(ev.event_year_month) <= hi and ev.origin in members
                and ev.destination in members):
            kept.append(ev)
        else:
            dropped += 1
    return kept, dropped
