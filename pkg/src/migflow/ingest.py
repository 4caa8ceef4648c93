"""Strict CSV readers and writers for every dataset the pipeline exchanges.

All files are UTF-8 CSV with a header row, ISO-8601 dates and ``.`` as the
decimal point. Readers fail on the first schema violation with the file and
line number; they never return a partial load.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .aggregator import ConfigError, Exclusion
from .countries import DEFAULT_UNIVERSE
from .model import (
    FlowTable,
    LocationTrace,
    MigrationEvent,
    ModelError,
    format_year_month,
    from_day,
    parse_year_month,
    to_day,
)
from .validation import ReferenceFlows
from .weighting import DIMENSIONS, CountryYearStats, RakingProblem

log = logging.getLogger(__name__)

TRACES = ("user_id", "date", "country")
FLOWS = ("origin", "destination", "year", "month", "value", "stage")
EVENTS = ("user_id", "origin", "destination", "year", "month",
          "origin_segment_end", "destination_segment_start")
REFERENCE = ("origin", "destination", "year", "migrants", "source")
STATS = ("country", "year", "population", "fb_users")
GNI = ("country", "gni_pc")
HDI = ("country", "hdi")
SCI = ("country_a", "country_b", "sci")
EXCLUSIONS = ("origin", "destination", "start_year_month", "end_year_month")
MARGINALS = ("country", "dimension", "category", "target")
SEEDS = ("country", "age_group", "sex", "region", "fb_users")
RATES = ("year", "r")
CURVE = ("year", "r", "abs_error")


class IngestError(ValueError):
    def __init__(self, path, line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


# -- low-level helpers -------------------------------------------------------

def _records(path, columns: Sequence[str]) -> Iterator[tuple[int, list[str]]]:
    path = Path(path)
    n = len(columns)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        if tuple(h.strip() for h in header) != tuple(columns):
            raise IngestError(path, 1, f"expected header {','.join(columns)}, "
                                       f"got {','.join(header)}")
        for row in reader:
            if len(row) != n:
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                raise IngestError(path, reader.line_num,
                                  f"expected {n} fields, got {len(row)}")
            yield reader.line_num, [v.strip() for v in row]


def _rows(path, columns: Sequence[str]) -> Iterator[tuple[int, dict]]:
    for line, row in _records(path, columns):
        yield line, dict(zip(columns, row))


def _num(path, line, name, text, kind=float):
    try:
        v = kind(text)
    except ValueError:
        raise IngestError(path, line, f"{name}: not a number: {text!r}") from None
    if kind is float and not math.isfinite(v):
        raise IngestError(path, line, f"{name}: not finite: {text!r}")
    return v


def _country(path, line, text, universe=None):
    if not (len(text) == 2 and text.isascii() and text.isalpha() and text.isupper()):
        raise IngestError(path, line, f"invalid country code {text!r}")
    if universe is not None and text not in universe:
        raise IngestError(path, line, f"country {text!r} not in the universe")
    return text


def _day(path, line, text):
    try:
        return to_day(date.fromisoformat(text))
    except ValueError:
        raise IngestError(path, line, f"invalid date {text!r}") from None


def _ym(path, line, text):
    try:
        return parse_year_month(text)
    except ModelError as exc:
        raise IngestError(path, line, str(exc)) from None


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _parse_value(path, line, text):
    if text.lstrip("-").isdigit():
        return int(text)
    return _num(path, line, "value", text)


def _write(path, columns, rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(row)


# -- traces ------------------------------------------------------------------

def _trace_rows(path, members):
    """(line, user, day, country, date text) per row; dates and codes are
    validated once per distinct value."""
    days: dict[str, int] = {}
    codes: set[str] = set()
    for line, (user, text, country) in _records(path, TRACES):
        if not user:
            raise IngestError(path, line, "empty user_id")
        day = days.get(text)
        if day is None:
            day = days[text] = _day(path, line, text)
        if country not in codes:
            codes.add(_country(path, line, country, members))
        yield line, user, day, country, text


def iter_traces(path, universe: Optional[Iterable[str]] = DEFAULT_UNIVERSE,
                assume_sorted: bool = False) -> Iterator[LocationTrace]:
    """Yield one trace per user.

    With ``assume_sorted`` the file must be grouped by user with increasing
    dates; traces stream out one at a time and the order is still checked.
    Otherwise users are collected and sorted, then yielded by user id.
    """
    members = frozenset(universe) if universe is not None else None
    if assume_sorted:
        yield from _iter_sorted(path, members)
        return
    by_user: dict[str, tuple[list, list, list]] = {}
    for line, user, day, country, _ in _trace_rows(path, members):
        cols = by_user.get(user)
        if cols is None:
            cols = by_user[user] = ([], [], [])
        cols[0].append(day)
        cols[1].append(country)
        cols[2].append(line)
    for user in sorted(by_user):
        days, countries, lines = by_user.pop(user)
        order = sorted(range(len(days)), key=days.__getitem__)
        days = [days[i] for i in order]
        for k in range(1, len(days)):
            if days[k] == days[k - 1]:
                first, second = sorted((lines[order[k - 1]], lines[order[k]]))
                raise IngestError(path, second,
                                  f"duplicate day {from_day(days[k]).isoformat()} for user "
                                  f"{user!r} (first on line {first})")
        yield LocationTrace(user, tuple(days), tuple(countries[i] for i in order))


def _iter_sorted(path, members):
    done: set[str] = set()
    user = None
    days: list[int] = []
    countries: list[str] = []
    for line, uid, day, country, text in _trace_rows(path, members):
        if uid != user:
            if user is not None:
                done.add(user)
                yield LocationTrace(user, tuple(days), tuple(countries))
            if uid in done:
                raise IngestError(path, line, f"user {uid!r} is not contiguous in a sorted file")
            user, days, countries = uid, [], []
        if days and day <= days[-1]:
            kind = "duplicate" if day == days[-1] else "out-of-order"
            raise IngestError(path, line, f"{kind} day {text} for user {uid!r}")
        days.append(day)
        countries.append(country)
    if user is not None:
        yield LocationTrace(user, tuple(days), tuple(countries))


def load_traces(path, universe: Optional[Iterable[str]] = DEFAULT_UNIVERSE,
                assume_sorted: bool = False) -> list[LocationTrace]:
    return list(iter_traces(path, universe, assume_sorted))


def write_traces(path, traces: Iterable[LocationTrace]) -> None:
    def rows():
        for t in traces:
            for d, c in zip(t.days, t.countries):
                yield t.user_id, from_day(d).isoformat(), c
    _write(path, TRACES, rows())


# -- events ------------------------------------------------------------------

def write_events(path, events: Iterable[MigrationEvent]) -> None:
    _write(path, EVENTS, (
        (e.user_id, e.origin, e.destination, *e.event_year_month,
         from_day(e.origin_segment_end).isoformat(),
         from_day(e.destination_segment_start).isoformat())
        for e in events))


def load_events(path, universe: Optional[Iterable[str]] = DEFAULT_UNIVERSE
                ) -> list[MigrationEvent]:
    members = frozenset(universe) if universe is not None else None
    out = []
    for line, row in _rows(path, EVENTS):
        try:
            ev = MigrationEvent(row["user_id"],
                                _country(path, line, row["origin"], members),
                                _country(path, line, row["destination"], members),
                                _day(path, line, row["origin_segment_end"]),
                                _day(path, line, row["destination_segment_start"]))
        except ModelError as exc:
            raise IngestError(path, line, str(exc)) from None
        ym = (_num(path, line, "year", row["year"], int), _num(path, line, "month", row["month"], int))
        if ym != ev.event_year_month:
            raise IngestError(path, line, "year/month disagree with destination_segment_start")
        out.append(ev)
    return out


# -- flow tables -------------------------------------------------------------

def _meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_flows(path, table: FlowTable) -> None:
    """Write non-zero cells in canonical order plus a ``.meta.json`` sidecar.

    The sidecar carries the universe, month range, stage and missing cells,
    which the CSV alone cannot express.
    """
    rows = []
    for key in table.cells():
        v = table.entries.get(key)
        if v is not None:
            rows.append((*key, _fmt(v), table.stage))
    _write(path, FLOWS, rows)
    meta = {
        "stage": table.stage,
        "universe": list(table.universe),
        "start": format_year_month(table.start),
        "end": format_year_month(table.end),
        "missing": sorted(list(k) for k in table.missing),
    }
    _meta_path(path).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def load_flows(path, universe: Optional[Sequence[str]] = None, start=None, end=None
               ) -> FlowTable:
    """Read a flow CSV; metadata comes from the sidecar unless given explicitly."""
    meta = {}
    mp = _meta_path(path)
    if mp.exists():
        try:
            meta = json.loads(mp.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(mp, None, f"invalid metadata: {exc}") from None
    entries = {}
    stages = set()
    for line, row in _rows(path, FLOWS):
        key = (_country(path, line, row["origin"]), _country(path, line, row["destination"]),
               _num(path, line, "year", row["year"], int),
               _num(path, line, "month", row["month"], int))
        if key in entries:
            raise IngestError(path, line, f"duplicate cell {key}")
        value = _parse_value(path, line, row["value"])
        if value < 0:
            raise IngestError(path, line, "negative flow value")
        entries[key] = value
        stages.add(row["stage"])
    if len(stages) > 1:
        raise IngestError(path, None, f"mixed stages {sorted(stages)}")
    stage = meta.get("stage") or (stages.pop() if stages else "raw")
    if stages and stage not in stages:
        raise IngestError(path, None, "stage column disagrees with metadata")
    universe = tuple(universe or meta.get("universe") or DEFAULT_UNIVERSE)
    if start is None:
        start = parse_year_month(meta["start"]) if "start" in meta else \
            min(((k[2], k[3]) for k in entries), default=None)
    if end is None:
        end = parse_year_month(meta["end"]) if "end" in meta else \
            max(((k[2], k[3]) for k in entries), default=None)
    if start is None or end is None:
        raise IngestError(path, None, "month range unknown: empty table without metadata")
    missing = frozenset(tuple(k) for k in meta.get("missing", []))
    try:
        return FlowTable(entries, stage, universe, tuple(start), tuple(end), missing)
    except ModelError as exc:
        raise IngestError(path, None, str(exc)) from None


# -- statistics --------------------------------------------------------------

def load_gni(path) -> dict[str, float]:
    out = {}
    for line, row in _rows(path, GNI):
        c = _country(path, line, row["country"])
        v = _num(path, line, "gni_pc", row["gni_pc"])
        if not v > 0:
            raise IngestError(path, line, "gni_pc must be positive")
        if c in out:
            raise IngestError(path, line, f"duplicate country {c}")
        out[c] = v
    return out


def load_stats(path, gni_path=None) -> list[CountryYearStats]:
    """Population and platform users per country-year; penetration capped at 1."""
    gni = load_gni(gni_path) if gni_path is not None else {}
    out = []
    seen = set()
    for line, row in _rows(path, STATS):
        c = _country(path, line, row["country"])
        y = _num(path, line, "year", row["year"], int)
        pop = _num(path, line, "population", row["population"])
        users = _num(path, line, "fb_users", row["fb_users"])
        if not pop > 0:
            raise IngestError(path, line, "population must be positive")
        if not users > 0:
            raise IngestError(path, line, "fb_users must be positive")
        if users > pop:
            log.warning("%s:%d: %s %d penetration %.3f capped at 1", path, line, c, y, users / pop)
            users = pop
        if (c, y) in seen:
            raise IngestError(path, line, f"duplicate stats row for {c} {y}")
        seen.add((c, y))
        out.append(CountryYearStats(c, y, pop, users, gni.get(c)))
    return out


def write_stats(path, stats: Iterable[CountryYearStats]) -> None:
    _write(path, STATS, ((s.country, s.year, _fmt(s.population), _fmt(s.fb_users))
                         for s in stats))


def write_gni(path, gni: Mapping[str, float]) -> None:
    _write(path, GNI, ((c, _fmt(v)) for c, v in sorted(gni.items())))


def load_hdi(path) -> dict[str, float]:
    out = {}
    for line, row in _rows(path, HDI):
        c = _country(path, line, row["country"])
        v = _num(path, line, "hdi", row["hdi"])
        if not 0 <= v <= 1:
            raise IngestError(path, line, "hdi must lie in [0, 1]")
        if c in out:
            raise IngestError(path, line, f"duplicate country {c}")
        out[c] = v
    return out


def write_hdi(path, hdi: Mapping[str, float]) -> None:
    _write(path, HDI, ((c, _fmt(v)) for c, v in sorted(hdi.items())))


def load_sci(path) -> dict[tuple[str, str], float]:
    out = {}
    for line, row in _rows(path, SCI):
        a = _country(path, line, row["country_a"])
        b = _country(path, line, row["country_b"])
        v = _num(path, line, "sci", row["sci"])
        if v < 0:
            raise IngestError(path, line, "sci must be non-negative")
        out[(a, b)] = v
    return out


def write_sci(path, sci: Mapping[tuple[str, str], float]) -> None:
    _write(path, SCI, ((a, b, _fmt(v)) for (a, b), v in sorted(sci.items())))


# -- reference flows ---------------------------------------------------------

def load_reference(path) -> ReferenceFlows:
    entries = {}
    sources = set()
    for line, row in _rows(path, REFERENCE):
        key = (_country(path, line, row["origin"]), _country(path, line, row["destination"]),
               _num(path, line, "year", row["year"], int))
        if key[0] == key[1]:
            raise IngestError(path, line, "origin equals destination")
        v = _num(path, line, "migrants", row["migrants"])
        if v < 0:
            raise IngestError(path, line, "migrants must be non-negative")
        if key in entries:
            raise IngestError(path, line, f"duplicate reference pair {key}")
        entries[key] = int(v) if row["migrants"].isdigit() else v
        sources.add(row["source"])
    return ReferenceFlows(entries, ";".join(sorted(sources)) or "reference")


def write_reference(path, ref: ReferenceFlows) -> None:
    _write(path, REFERENCE, ((o, d, y, _fmt(v), ref.source)
                             for (o, d, y), v in sorted(ref.entries.items())))


# -- exclusions --------------------------------------------------------------

def load_exclusions(path) -> list[Exclusion]:
    out = []
    for line, row in _rows(path, EXCLUSIONS):
        try:
            out.append(Exclusion(_country(path, line, row["origin"]),
                                 _country(path, line, row["destination"]),
                                 _ym(path, line, row["start_year_month"]),
                                 _ym(path, line, row["end_year_month"])))
        except ConfigError as exc:
            raise IngestError(path, line, str(exc)) from None
    return out


def write_exclusions(path, exclusions: Iterable[Exclusion]) -> None:
    _write(path, EXCLUSIONS, ((e.origin, e.destination, format_year_month(e.start),
                               format_year_month(e.end)) for e in exclusions))


# -- raking inputs -----------------------------------------------------------

def load_raking(marginals_path, seeds_path, tolerance: float = 1e-8,
                max_iterations: int = 1000) -> dict[str, RakingProblem]:
    targets: dict[str, dict[str, dict[str, float]]] = defaultdict(lambda: defaultdict(dict))
    for line, row in _rows(marginals_path, MARGINALS):
        c = _country(marginals_path, line, row["country"])
        dim = row["dimension"]
        if dim not in DIMENSIONS:
            raise IngestError(marginals_path, line, f"unknown dimension {dim!r}")
        t = _num(marginals_path, line, "target", row["target"])
        if t < 0:
            raise IngestError(marginals_path, line, "target must be non-negative")
        if row["category"] in targets[c][dim]:
            raise IngestError(marginals_path, line, "duplicate marginal category")
        targets[c][dim][row["category"]] = t
    cells: dict[str, dict[tuple, float]] = defaultdict(dict)
    for line, row in _rows(seeds_path, SEEDS):
        c = _country(seeds_path, line, row["country"])
        n = _num(seeds_path, line, "fb_users", row["fb_users"])
        if n < 0:
            raise IngestError(seeds_path, line, "fb_users must be non-negative")
        key = (row["age_group"], row["sex"], row["region"])
        if key in cells[c]:
            raise IngestError(seeds_path, line, f"duplicate seed cell {key}")
        cells[c][key] = n
    out = {}
    for c in sorted(set(targets) | set(cells)):
        if c not in targets or c not in cells:
            raise IngestError(marginals_path if c not in targets else seeds_path, None,
                              f"country {c} lacks {'targets' if c not in targets else 'seeds'}")
        out[c] = RakingProblem(dict(cells[c]), {d: dict(v) for d, v in targets[c].items()},
                               tolerance, max_iterations)
    return out


def write_raking(marginals_path, seeds_path, problems: Mapping[str, RakingProblem]) -> None:
    _write(marginals_path, MARGINALS, (
        (c, dim, cat, _fmt(t))
        for c, p in sorted(problems.items())
        for dim in DIMENSIONS for cat, t in sorted(p.targets[dim].items())))
    _write(seeds_path, SEEDS, (
        (c, *key, _fmt(n)) for c, p in sorted(problems.items())
        for key, n in sorted(p.cells.items())))


# -- calibration outputs -----------------------------------------------------

def write_rates(path, rates: Mapping[int, float]) -> None:
    _write(path, RATES, ((y, _fmt(r)) for y, r in sorted(rates.items())))


def load_rates(path) -> dict[int, float]:
    out = {}
    for line, row in _rows(path, RATES):
        y = _num(path, line, "year", row["year"], int)
        r = _num(path, line, "r", row["r"])
        if not r > 0:
            raise IngestError(path, line, "selection rate must be positive")
        out[y] = r
    return out


def write_curve(path, curves: Mapping[int, tuple]) -> None:
    _write(path, CURVE, ((y, _fmt(float(r)), _fmt(float(e)))
                         for y, (grid, errs) in sorted(curves.items())
                         for r, e in zip(grid, errs)))
