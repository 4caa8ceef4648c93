"""Synthetic worlds with known migrations and income-biased platform membership.

Every migrant is drawn at population level; a migrant from origin ``o`` is on
the platform with probability ``income_o * pen_o + (1 - income_o) * r``,
so the selection-rate weight with the true ``r`` is unbiased by
construction. Stayers fill the platform up to ``n_users`` traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import ingest
from .aggregator import annualize, build_flow_table
from .model import (
    FlowTable,
    LocationTrace,
    MigrationEvent,
    YearMonth,
    from_day,
    iter_months,
    to_day,
)
from .rng import substream
from .validation import ReferenceFlows
from .weighting import CountryYearStats, RakingProblem, income_index

DEFAULT_COUNTRIES = ("NZ", "AU", "US", "GB", "DE", "KR", "BR", "ZA", "PH", "IN", "VN", "KE")

AGE_GROUPS = ("18-24", "25-34", "35-54", "55+")
SEXES = ("f", "m")
REGIONS = ("R1", "R2", "R3")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    countries: tuple[str, ...] = DEFAULT_COUNTRIES
    n_users: int = 10_000
    trace_start: str = "2018-01-01"
    trace_end: str = "2022-12-31"
    flow_start: YearMonth = (2019, 1)
    flow_end: YearMonth = (2021, 12)
    monthly_migrants: float = 300.0
    calibration_destination: str = "NZ"
    calibration_boost: float = 3.0
    selection_rate: float = 0.4
    usage_floor: float = 0.1
    usage_slope: float = 0.7
    activity: float = 0.6
    trip_prob: float = 0.05
    trip_mean_days: float = 5.0
    population: Optional[Mapping[str, float]] = None
    gni_pc: Optional[Mapping[str, float]] = None
    corridor_rates: Optional[Mapping[tuple[str, str], float]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "flow_start", tuple(self.flow_start))
        object.__setattr__(self, "flow_end", tuple(self.flow_end))
        if len(self.countries) < 2 or len(set(self.countries)) != len(self.countries):
            raise SynthError("need at least two distinct countries")
        for name in ("activity", "trip_prob", "usage_floor", "selection_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise SynthError(f"{name} must lie in [0, 1]")
        if self.trip_prob >= 1:
            raise SynthError("trip_prob must be below 1")
        if self.usage_floor + self.usage_slope > 1 or self.usage_slope < 0:
            raise SynthError("usage_floor + usage_slope must stay within [0, 1]")
        if self.trip_mean_days < 1:
            raise SynthError("trip_mean_days must be at least 1")
        if self.monthly_migrants < 0 or self.n_users < 0:
            raise SynthError("rates and user counts must be non-negative")
        if self.calibration_destination not in self.countries:
            raise SynthError("calibration destination must be one of the countries")

    @property
    def n_countries(self) -> int:
        return len(self.countries)


@dataclass
class SynthWorld:
    config: SynthConfig
    traces: list[LocationTrace]
    ground_truth_events: list[MigrationEvent]
    platform_users: frozenset
    corridor_counts: dict
    stats: list[CountryYearStats]
    gni_pc: dict[str, float]
    hdi: dict[str, float]
    sci: dict[tuple[str, str], float]
    raking: dict[str, RakingProblem]
    platform_probability: dict[str, float] = field(default_factory=dict)

    def population(self) -> dict[tuple[str, int], float]:
        return {(s.country, s.year): s.population for s in self.stats}

    def reference(self, destination: Optional[str] = None) -> ReferenceFlows:
        """Annual ground-truth flows, optionally only into ``destination``."""
        annual = annualize(ground_truth_flows(self))
        entries = {k: v for k, v in annual.items() if destination is None or k[1] == destination}
        return ReferenceFlows(entries, "synthetic-nso")

    def write(self, out_dir) -> dict[str, Path]:
        """Emit every dataset in the ingest formats."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.csv" for name in
                 ("traces", "stats", "gni", "hdi", "sci", "reference", "truth",
                  "marginals", "seeds")}
        ingest.write_traces(paths["traces"], self.traces)
        ingest.write_stats(paths["stats"], self.stats)
        ingest.write_gni(paths["gni"], self.gni_pc)
        ingest.write_hdi(paths["hdi"], self.hdi)
        ingest.write_sci(paths["sci"], self.sci)
        ingest.write_reference(paths["reference"], self.reference())
        ingest.write_flows(paths["truth"], ground_truth_flows(self))
        ingest.write_raking(paths["marginals"], paths["seeds"], self.raking)
        return paths


def _country_attributes(cfg: SynthConfig):
    rng = substream(cfg.seed, "countries")
    k = cfg.n_countries
    gni_draw = np.exp(rng.normal(np.log(12_000), 1.2, size=k))
    pop_draw = np.exp(rng.normal(np.log(2e7), 1.0, size=k))
    gni = dict(cfg.gni_pc) if cfg.gni_pc else {c: float(round(g, 2)) for c, g in zip(cfg.countries, gni_draw)}
    pop = dict(cfg.population) if cfg.population else {c: float(round(p)) for c, p in zip(cfg.countries, pop_draw)}
    for c in cfg.countries:
        if c not in gni or c not in pop:
            raise SynthError(f"missing population or GNI for {c}")
        if not (gni[c] > 0 and pop[c] > 0):
            raise SynthError(f"population and GNI for {c} must be positive")
    return pop, gni


def _corridor_rates(cfg: SynthConfig, pop, gni) -> dict[tuple[str, str], float]:
    if cfg.corridor_rates is not None:
        rates = {k: float(v) for k, v in cfg.corridor_rates.items()}
        for (o, d), v in rates.items():
            if o == d or o not in cfg.countries or d not in cfg.countries or v < 0:
                raise SynthError(f"invalid corridor rate {(o, d)}: {v}")
        return rates
    rng = substream(cfg.seed, "corridors")
    top = max(gni.values())
    attract = {c: np.exp(rng.normal(0, 0.4)) * (gni[c] / top) ** 0.4 for c in cfg.countries}
    attract[cfg.calibration_destination] *= cfg.calibration_boost
    raw = {}
    for o in cfg.countries:
        for d in cfg.countries:
            if o != d:
                raw[(o, d)] = np.sqrt(pop[o]) * attract[d] * np.exp(rng.normal(0, 1.0))
    scale = cfg.monthly_migrants / sum(raw.values()) if raw else 0.0
    return {k: float(v * scale) for k, v in raw.items()}


def _trace(cfg: SynthConfig, user_id: str, home: int, dest: Optional[int],
           move_day: Optional[int], t0: int, t1: int) -> LocationTrace:
    rng = substream(cfg.seed, "trace", user_id)
    k = cfg.n_countries
    days = np.arange(t0, t1 + 1)
    if dest is None:
        res = np.full(days.size, home)
    else:
        res = np.where(days < move_day, home, dest)
    loc = res.copy()
    if cfg.trip_prob > 0:
        p_start = cfg.trip_prob / ((1 - cfg.trip_prob) * cfg.trip_mean_days)
        starts = np.flatnonzero(rng.random(days.size) < p_start)
        lengths = rng.geometric(1.0 / cfg.trip_mean_days, size=starts.size)
        away = rng.integers(0, k - 1, size=starts.size)
        for s, n, a in zip(starts, lengths, away):
            a = a + (a >= res[s])
            loc[s:s + n] = a
    seen = rng.random(days.size) < cfg.activity
    codes = cfg.countries
    return LocationTrace(user_id, tuple(days[seen].tolist()),
                         tuple(codes[i] for i in loc[seen]))


def _raking_problems(cfg: SynthConfig, pop, pen) -> dict[str, RakingProblem]:
    rng = substream(cfg.seed, "raking")
    usage_by_age = np.array([1.4, 1.2, 0.9, 0.5])
    out = {}
    for c in cfg.countries:
        joint = rng.dirichlet(np.full(len(AGE_GROUPS) * len(SEXES) * len(REGIONS), 5.0))
        joint = joint.reshape(len(AGE_GROUPS), len(SEXES), len(REGIONS)) * pop[c]
        users = joint * usage_by_age[:, None, None]
        users *= pen[c] * pop[c] / users.sum()
        cells = {}
        for i, a in enumerate(AGE_GROUPS):
            for j, s in enumerate(SEXES):
                for m, r in enumerate(REGIONS):
                    cells[(a, s, r)] = float(round(users[i, j, m], 3))
        targets = {
            "age_group": {a: float(joint[i].sum()) for i, a in enumerate(AGE_GROUPS)},
            "sex": {s: float(joint[:, j].sum()) for j, s in enumerate(SEXES)},
            "region": {r: float(joint[:, :, m].sum()) for m, r in enumerate(REGIONS)},
        }
        out[c] = RakingProblem(cells, targets, tolerance=1e-8)
    return out


def generate_world(config: SynthConfig) -> SynthWorld:
    """Deterministic synthetic world for ``config.seed``."""
    cfg = config
    t0, t1 = to_day(cfg.trace_start), to_day(cfg.trace_end)
    years = sorted({from_day(d).year for d in (t0, t1)} | set(range(from_day(t0).year,
                                                                  from_day(t1).year + 1)))
    pop, gni = _country_attributes(cfg)
    income = income_index(gni)
    pen = {c: cfg.usage_floor + cfg.usage_slope * income[c] for c in cfg.countries}
    p_platform = {c: income[c] * pen[c] + (1 - income[c]) * cfg.selection_rate
                  for c in cfg.countries}
    for c, p in p_platform.items():
        if not 0 < p <= 1:
            raise SynthError(f"platform probability for {c} is {p}, outside (0, 1]")
    rates = _corridor_rates(cfg, pop, gni)
    months = list(iter_months(cfg.flow_start, cfg.flow_end))
    first_move = to_day(f"{cfg.flow_start[0]:04d}-{cfg.flow_start[1]:02d}-01")
    if first_move - t0 < 365:
        raise SynthError("traces must start at least 365 days before the first flow month")
    last_ym = cfg.flow_end
    nxt = (last_ym[0] + (last_ym[1] == 12), last_ym[1] % 12 + 1)
    if t1 - (to_day(f"{nxt[0]:04d}-{nxt[1]:02d}-01") - 1) < 365:
        raise SynthError("traces must extend at least 365 days past the last flow month")

    flow_rng = substream(cfg.seed, "flows")
    index = {c: i for i, c in enumerate(cfg.countries)}
    counts = {}
    movers = []  # (origin, destination, day, on_platform)
    emigrants = {c: 0 for c in cfg.countries}
    for (o, d) in sorted(rates):
        for (y, m) in months:
            n = int(flow_rng.poisson(rates[(o, d)]))
            counts[(o, d, y, m)] = n
            if n == 0:
                continue
            emigrants[o] += n
            if emigrants[o] > pop[o]:
                raise SynthError(f"{emigrants[o]} emigrants from {o} exceed its population "
                                 f"{pop[o]:.0f}")
            start = to_day(f"{y:04d}-{m:02d}-01")
            nxt_y, nxt_m = (y + (m == 12), m % 12 + 1)
            length = to_day(f"{nxt_y:04d}-{nxt_m:02d}-01") - start
            days = start + flow_rng.integers(0, length, size=n)
            on = flow_rng.random(n) < p_platform[o]
            movers.extend((o, d, int(dd), bool(b)) for dd, b in zip(days, on))

    n_platform = sum(1 for mv in movers if mv[3])
    if n_platform > cfg.n_users:
        raise SynthError(f"{n_platform} platform migrants exceed n_users={cfg.n_users}")

    events, platform, plans = [], set(), []
    u = n = 0
    for o, d, day, on in movers:
        if on:
            uid = f"u{u:07d}"
            u += 1
            platform.add(uid)
            plans.append((uid, index[o], index[d], day))
        else:
            uid = f"n{n:07d}"
            n += 1
        events.append(MigrationEvent(uid, o, d, day - 1, day))

    stay_rng = substream(cfg.seed, "stayers")
    weights = np.array([pen[c] * pop[c] for c in cfg.countries])
    homes = stay_rng.choice(cfg.n_countries, size=cfg.n_users - n_platform, p=weights / weights.sum())
    for h in homes:
        uid = f"u{u:07d}"
        u += 1
        platform.add(uid)
        plans.append((uid, int(h), None, None))

    traces = [_trace(cfg, uid, h, dst, day, t0, t1) for uid, h, dst, day in plans]

    stats = [CountryYearStats(c, y, pop[c], round(pen[c] * pop[c]), gni[c])
             for c in cfg.countries for y in years]
    lo_g, hi_g = np.log(min(gni.values())), np.log(max(gni.values()))
    hdi_rng = substream(cfg.seed, "hdi")
    hdi = {}
    for c in cfg.countries:
        frac = (np.log(gni[c]) - lo_g) / (hi_g - lo_g) if hi_g > lo_g else 1.0
        hdi[c] = float(round(min(0.99, max(0.3, 0.4 + 0.55 * frac + hdi_rng.normal(0, 0.02))), 4))
    sci_rng = substream(cfg.seed, "sci")
    sci = {}
    for i, a in enumerate(cfg.countries):
        for b in cfg.countries[i + 1:]:
            flow = rates.get((a, b), 0) + rates.get((b, a), 0)
            base = flow / (pop[a] * pop[b]) * 1e15 if flow > 0 else 1e-3
            sci[(a, b)] = float(base * np.exp(sci_rng.normal(0, 0.5)))

    return SynthWorld(cfg, traces, events, frozenset(platform), counts, stats, gni, hdi, sci,
                      _raking_problems(cfg, pop, pen), p_platform)


def ground_truth_flows(world: SynthWorld) -> FlowTable:
    """Population-level flows from every generated migration, users or not."""
    cfg = world.config
    return build_flow_table(world.ground_truth_events, cfg.flow_start, cfg.flow_end,
                            cfg.countries)


def platform_events(world: SynthWorld) -> list[MigrationEvent]:
    return [e for e in world.ground_truth_events if e.user_id in world.platform_users]
