"""Shared domain types: day stamps, traces, segments, events and flow tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional, Sequence


EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

STAGES = ("raw", "weighted", "privatized")

YearMonth = tuple[int, int]
CellKey = tuple[str, str, int, int]


class ModelError(ValueError):
    """An invariant of a domain type was violated."""


# -- days and months ---------------------------------------------------------

def to_day(value: date | str | int) -> int:
    """Day index since 1970-01-01 for a date, an ISO string or an index."""
    if isinstance(value, bool):
        raise ModelError(f"not a day: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            value = date.fromisoformat(value)
        except ValueError as exc:
            raise ModelError(f"invalid ISO date {value!r}") from exc
    return value.toordinal() - EPOCH_ORDINAL


def from_day(day: int) -> date:
    return date.fromordinal(day + EPOCH_ORDINAL)


def day_year_month(day: int) -> YearMonth:
    d = from_day(day)
    return d.year, d.month


def month_index(ym: YearMonth) -> int:
    """Absolute month counter, year * 12 + month - 1."""
    year, month = ym
    return year * 12 + month - 1


def from_month_index(index: int) -> YearMonth:
    return index // 12, index % 12 + 1


def iter_months(start: YearMonth, end: YearMonth) -> Iterator[YearMonth]:
    for i in range(month_index(start), month_index(end) + 1):
        yield from_month_index(i)


def parse_year_month(text: str) -> YearMonth:
    """Parse ``YYYY-MM``."""
    try:
        year_s, month_s = text.strip().split("-")
        ym = int(year_s), int(month_s)
    except ValueError as exc:
        raise ModelError(f"invalid year-month {text!r}, expected YYYY-MM") from exc
    if not 1 <= ym[1] <= 12:
        raise ModelError(f"invalid month in {text!r}")
    return ym


def format_year_month(ym: YearMonth) -> str:
    return f"{ym[0]:04d}-{ym[1]:02d}"


# -- countries ---------------------------------------------------------------

def check_country(code: str, universe: Optional[Iterable[str]] = None) -> str:
    if not (isinstance(code, str) and len(code) == 2 and code.isascii()
            and code.isalpha() and code.isupper()):
        raise ModelError(f"invalid country code {code!r}")
    if universe is not None and code not in universe:
        raise ModelError(f"country {code!r} is outside the configured universe")
    return code


# -- traces and detection ----------------------------------------------------

@dataclass(frozen=True)
class LocationTrace:
    """One user's daily home-country observations, strictly increasing in day."""

    user_id: str
    days: tuple[int, ...]
    countries: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(int(d) for d in self.days))
        object.__setattr__(self, "countries", tuple(self.countries))
        if len(self.days) != len(self.countries):
            raise ModelError("days and countries differ in length")
        for a, b in zip(self.days, self.days[1:]):
            if b <= a:
                raise ModelError(
                    f"trace {self.user_id!r}: days not strictly increasing at {from_day(b)}")
        for c in set(self.countries):
            check_country(c)

    @classmethod
    def from_observations(cls, user_id: str,
                          observations: Iterable[tuple[date | str | int, str]]) -> "LocationTrace":
        obs = [(to_day(d), c) for d, c in observations]
        return cls(user_id, tuple(d for d, _ in obs), tuple(c for _, c in obs))

    @property
    def observations(self) -> list[tuple[int, str]]:
        return list(zip(self.days, self.countries))

    def __len__(self) -> int:
        return len(self.days)


@dataclass(frozen=True)
class DetectionParams:
    epsilon_days: int = 60
    min_days: int = 365
    prop_days: float = 0.5
    max_intersegment_gap_days: int = 60

    def __post_init__(self):
        if self.epsilon_days < 1:
            raise ModelError("epsilon_days must be >= 1")
        if self.min_days < 1:
            raise ModelError("min_days must be >= 1")
        if not 0 < self.prop_days <= 1:
            raise ModelError("prop_days must lie in (0, 1]")
        if self.max_intersegment_gap_days < 0:
            raise ModelError("max_intersegment_gap_days must be >= 0")

    def accepts(self, span_days: int, observed_days: int) -> bool:
        """Length and observed-proportion test for a residence span."""
        return span_days >= self.min_days and observed_days >= self.prop_days * span_days


PRESETS: dict[str, DetectionParams] = {
    # 12 months, half the days observed
    "un": DetectionParams(epsilon_days=60, min_days=365, prop_days=0.5),
    # 12 of 16 months
    "nz": DetectionParams(epsilon_days=60, min_days=487, prop_days=0.75),
    # 3 of 6 months
    "short": DetectionParams(epsilon_days=60, min_days=182, prop_days=0.5),
}


@dataclass(frozen=True)
class ResidenceSegment:
    """A span of residence in one country.

    ``days`` holds the observed in-country days inside ``[start, end]``.
    """

    country: str
    start: int
    end: int
    days: tuple[int, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.end < self.start:
            raise ModelError("segment end precedes start")
        if self.days and (self.days[0] < self.start or self.days[-1] > self.end):
            raise ModelError("segment days fall outside its span")

    @property
    def span_days(self) -> int:
        return self.end - self.start + 1

    @property
    def observed_days(self) -> int:
        return len(self.days)

    def overlaps(self, other: "ResidenceSegment") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class MigrationEvent:
    user_id: str
    origin: str
    destination: str
    origin_segment_end: int
    destination_segment_start: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ModelError("migration origin equals destination")
        if self.destination_segment_start <= self.origin_segment_end:
            raise ModelError("destination segment must start after origin segment ends")

    @property
    def gap_days(self) -> int:
        return self.destination_segment_start - self.origin_segment_end

    @property
    def event_year_month(self) -> YearMonth:
        return day_year_month(self.destination_segment_start)


# -- flow tables -------------------------------------------------------------

@dataclass(frozen=True)
class FlowTable:
    """Country-pair-by-month values over a fixed universe and month range.

    Cells absent from ``entries`` are zero; cells in ``missing`` are unknown
    and are skipped by every downstream computation.
    """

    entries: Mapping[CellKey, float]
    stage: str
    universe: tuple[str, ...]
    start: YearMonth
    end: YearMonth
    missing: frozenset = frozenset()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ModelError(f"unknown stage {self.stage!r}")
        universe = tuple(self.universe)
        if len(set(universe)) != len(universe):
            raise ModelError("duplicate countries in universe")
        object.__setattr__(self, "universe", universe)
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "end", tuple(self.end))
        if month_index(self.end) < month_index(self.start):
            raise ModelError("month range end precedes start")
        members = set(universe)
        lo, hi = month_index(self.start), month_index(self.end)
        clean = {}
        for key, value in self.entries.items():
            self._check_key(key, members, lo, hi)
            if not (math.isfinite(value) and value >= 0):
                raise ModelError(f"cell {key} has invalid value {value!r}")
            if value != 0:
                clean[key] = value
        missing = frozenset(self.missing)
        for key in missing:
            self._check_key(key, members, lo, hi)
            if key in clean:
                raise ModelError(f"cell {key} is both valued and missing")
        object.__setattr__(self, "entries", MappingProxyType(clean))
        object.__setattr__(self, "missing", missing)

    @staticmethod
    def _check_key(key, members, lo, hi):
        o, d, y, m = key
        if o == d:
            raise ModelError(f"cell {key} has origin equal to destination")
        if o not in members or d not in members:
            raise ModelError(f"cell {key} is outside the universe")
        if not (1 <= m <= 12 and lo <= y * 12 + m - 1 <= hi):
            raise ModelError(f"cell {key} is outside the month range")

    def __eq__(self, other):
        if not isinstance(other, FlowTable):
            return NotImplemented
        return (dict(self.entries) == dict(other.entries) and self.stage == other.stage
                and self.universe == other.universe and self.start == other.start
                and self.end == other.end and self.missing == other.missing)

    __hash__ = None

    @classmethod
    def empty(cls, universe: Sequence[str], start: YearMonth, end: YearMonth,
              stage: str = "raw") -> "FlowTable":
        return cls({}, stage, tuple(universe), start, end)

    def months(self) -> list[YearMonth]:
        return list(iter_months(self.start, self.end))

    def pairs(self) -> Iterator[tuple[str, str]]:
        for o in self.universe:
            for d in self.universe:
                if o != d:
                    yield o, d

    def cells(self) -> Iterator[CellKey]:
        """Every cell of the table in canonical order, missing ones included."""
        months = self.months()
        for o, d in self.pairs():
            for y, m in months:
                yield o, d, y, m

    def get(self, key: CellKey) -> Optional[float]:
        """Cell value, or None when the cell is missing."""
        if key in self.missing:
            return None
        return self.entries.get(key, 0)

    def contains_cell(self, key: CellKey) -> bool:
        o, d, y, m = key
        return (o != d and o in self.universe and d in self.universe and 1 <= m <= 12
                and month_index(self.start) <= month_index((y, m)) <= month_index(self.end))

    def total(self) -> float:
        return sum(self.entries.values())

    def with_values(self, entries: Mapping[CellKey, float], stage: Optional[str] = None,
                    missing: Optional[Iterable[CellKey]] = None) -> "FlowTable":
        return replace(self, entries=entries, stage=stage or self.stage,
                       missing=frozenset(self.missing if missing is None else missing))

    def same_frame(self, other: "FlowTable") -> bool:
        return (self.stage == other.stage and self.universe == other.universe
                and self.start == other.start and self.end == other.end)
