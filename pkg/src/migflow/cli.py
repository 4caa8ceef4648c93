"""Command-line entry point: ``migflow <subcommand> [flags]``.

Settings resolve in order: command-line flag, environment variable
``MIGFLOW_<SECTION>_<KEY>`` (``MIGFLOW_<KEY>`` for top-level keys), config
file, built-in default.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import ingest
from .aggregator import (
    annualize,
    apply_exclusions,
    build_flow_table,
    events_in_range,
    impute_months,
)
from .countries import DEFAULT_UNIVERSE, OECD
from .model import PRESETS, DetectionParams, format_year_month, parse_year_month
from .privacy import PrivacyParams, privatize, sensitivity_from_release
from .segmenter import detect_all, epsilon_sweep
from .synth import DEFAULT_COUNTRIES, SynthConfig, generate_world
from .validation import migration_intensity, sci_correlation, validation_report
from .weighting import (
    SCHEMES,
    apply_weights,
    calibrate_selection_rate,
    coefficient_weights,
    default_grid,
    destination_year_inflows,
    fit_coefficient,
    income_index,
    index_stats,
    penetration_weights,
    raking_weights,
    raw_weights,
    selection_weights,
)

log = logging.getLogger("migflow")

ENV_PREFIX = "MIGFLOW"
DEMO_CONFIG = Path(__file__).parent / "data" / "demo.toml"

SUBCOMMANDS = ("synth", "detect", "aggregate", "weight", "calibrate", "privatize",
               "validate", "pipeline", "diagnose")


class CLIError(Exception):
    """A user-facing failure: bad flags, missing inputs or contradictory config."""


# -- settings ----------------------------------------------------------------

class Settings:
    def __init__(self, config: dict, base_dir: Path):
        self.config = config
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: Optional[str]) -> "Settings":
        if not path:
            return cls({}, Path.cwd())
        p = Path(path)
        if not p.exists():
            raise CLIError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise CLIError(f"{p}: invalid TOML: {exc}") from None
        return cls(data, p.resolve().parent)

    def get(self, section: Optional[str], key: str, flag: Any = None, default: Any = None):
        if flag is not None:
            return flag
        env = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}" if section else \
            f"{ENV_PREFIX}_{key.upper()}"
        if env in os.environ:
            return _parse_env(os.environ[env])
        scope = self.config.get(section, {}) if section else self.config
        if key in scope:
            return scope[key]
        return default

    def path(self, section: Optional[str], key: str, flag: Any = None,
             required: bool = True) -> Optional[Path]:
        value = self.get(section, key, flag)
        if value in (None, ""):
            if required:
                where = f"[{section}] {key}" if section else key
                raise CLIError(f"missing required path: --{key.replace('_', '-')} or {where}")
            return None
        p = Path(value)
        if flag is None and not p.is_absolute():
            p = self.base_dir / p
        return p


def _parse_env(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _universe(settings: Settings, flag: Optional[str] = None) -> tuple[str, ...]:
    value = settings.get(None, "universe", flag)
    if value in (None, "", "default"):
        # a synthetic run defaults to the world's own countries
        if "synth" in settings.config:
            return tuple(settings.config["synth"].get("countries", DEFAULT_COUNTRIES))
        return DEFAULT_UNIVERSE
    if isinstance(value, str):
        value = [c.strip() for c in value.split(",") if c.strip()]
    return tuple(value)


def _out(settings: Settings, flag, name: str) -> Path:
    if flag:
        return Path(flag)
    return Path(settings.get(None, "out_dir", None, ".")) / name


def _require(path: Optional[Path], what: str) -> Path:
    if path is None or not Path(path).exists():
        raise CLIError(f"{what} not found: {path}")
    return Path(path)


def _ym_list(values) -> list[tuple[int, int]]:
    if values in (None, ""):
        return []
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    return [parse_year_month(v) for v in values]


# -- stages ------------------------------------------------------------------

def run_synth(settings: Settings, out_dir: Path, seed: Optional[int] = None) -> dict:
    raw = dict(settings.config.get("synth", {}))
    raw["seed"] = int(settings.get(None, "seed", seed, 0))
    for key in ("flow_start", "flow_end"):
        if key in raw and isinstance(raw[key], str):
            raw[key] = parse_year_month(raw[key])
    if "countries" in raw:
        raw["countries"] = tuple(raw["countries"])
    try:
        cfg = SynthConfig(**raw)
    except TypeError as exc:
        raise CLIError(f"[synth]: {exc}") from None
    world = generate_world(cfg)
    paths = world.write(out_dir)
    log.info("synth: %d traces, %d true migrations -> %s", len(world.traces),
             len(world.ground_truth_events), out_dir)
    return paths


def detection_params(settings: Settings, args=None) -> DetectionParams:
    a = args or argparse.Namespace()
    preset = settings.get("detect", "preset", getattr(a, "preset", None), "un")
    if preset not in PRESETS:
        raise CLIError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset]
    return DetectionParams(
        int(settings.get("detect", "epsilon_days", getattr(a, "epsilon", None), base.epsilon_days)),
        int(settings.get("detect", "min_days", getattr(a, "min_days", None), base.min_days)),
        float(settings.get("detect", "prop_days", getattr(a, "prop_days", None), base.prop_days)),
        int(settings.get("detect", "max_gap", getattr(a, "max_gap", None),
                         base.max_intersegment_gap_days)),
    )


def run_detect(settings: Settings, traces: Path, out: Path, params: DetectionParams,
               workers: int, assume_sorted: bool, universe) -> int:
    loaded = ingest.load_traces(_require(traces, "traces file"), universe, assume_sorted)
    events = detect_all(loaded, params, workers=workers)
    ingest.write_events(out, events)
    log.info("detect: %d traces -> %d events", len(loaded), len(events))
    return len(events)


def run_aggregate(settings: Settings, events_path: Path, out: Path, start, end, universe,
                  exclusions: Optional[Path], impute) -> None:
    events = ingest.load_events(_require(events_path, "events file"), universe)
    kept, dropped = events_in_range(events, start, end, universe)
    if dropped:
        log.info("aggregate: %d events outside %s..%s dropped", dropped,
                 format_year_month(start), format_year_month(end))
    table = build_flow_table(kept, start, end, universe)
    if exclusions is not None:
        table, removed = apply_exclusions(table, ingest.load_exclusions(
            _require(exclusions, "exclusions file")))
        log.info("aggregate: %d cells excluded", len(removed))
    if impute:
        table, unresolved = impute_months(table, impute)
        if unresolved:
            log.warning("aggregate: %d cells left missing by imputation", len(unresolved))
    ingest.write_flows(out, table)


def run_calibrate(settings: Settings, flows: Path, reference: Path, stats: Path, gni: Path,
                  destination: str, out: Path, curve_out: Optional[Path], grid) -> dict:
    table = ingest.load_flows(_require(flows, "flows file"))
    ref = ingest.load_reference(_require(reference, "reference file"))
    st = index_stats(ingest.load_stats(_require(stats, "stats file")))
    income = income_index(ingest.load_gni(_require(gni, "GNI file")))
    years = sorted({y for y, _ in table.months()})
    rates, curves = {}, {}
    for y in years:
        ref_y = {o: v for (o, d, yy), v in ref.entries.items() if d == destination and yy == y}
        if not ref_y:
            log.warning("calibrate: no reference inflows into %s for %d", destination, y)
            continue
        cal = calibrate_selection_rate(destination_year_inflows(table, destination, y), ref_y,
                                       st, income, y, grid)
        rates[y] = cal.r
        curves[y] = (cal.grid, cal.errors)
        log.info("calibrate: %d r=%.2f (error %.1f)", y, cal.r, cal.min_error)
    if not rates:
        raise CLIError(f"no year has reference inflows into {destination}")
    ingest.write_rates(out, rates)
    if curve_out is not None:
        ingest.write_curve(curve_out, curves)
    return rates


def run_weight(settings: Settings, flows: Path, out: Path, scheme: str, stats: Optional[Path],
               gni: Optional[Path], rates: Optional[Path], reference: Optional[Path],
               destination: Optional[str], marginals: Optional[Path], seeds: Optional[Path],
               beta: Optional[float]) -> None:
    table = ingest.load_flows(_require(flows, "flows file"))
    if table.stage != "raw":
        raise CLIError(f"weight expects a raw table, got stage {table.stage!r}")
    keys = {(o, y) for o in table.universe for y, _ in table.months()}
    if scheme == "raw":
        model = raw_weights(keys)
    elif scheme == "penetration":
        model = penetration_weights(ingest.load_stats(_require(stats, "stats file")))
    elif scheme == "selection":
        model = selection_weights(
            ingest.load_stats(_require(stats, "stats file")),
            income_index(ingest.load_gni(_require(gni, "GNI file"))),
            ingest.load_rates(_require(rates, "selection-rate file (run calibrate first)")))
    elif scheme == "coefficient":
        if beta is None:
            ref = ingest.load_reference(_require(reference, "reference file"))
            xs, ys = [], []
            for y in sorted({y for y, _ in table.months()}):
                inflow = destination_year_inflows(table, destination, y)
                for (o, d, yy), v in sorted(ref.entries.items()):
                    if d == destination and yy == y and o in inflow:
                        xs.append(inflow[o])
                        ys.append(v)
            beta = fit_coefficient(xs, ys)
            log.info("weight: fitted coefficient %.4f on %d pairs", beta, len(xs))
        model = coefficient_weights(float(beta), keys)
    elif scheme == "raking":
        problems = ingest.load_raking(_require(marginals, "marginals file"),
                                      _require(seeds, "seeds file"))
        model = raking_weights(problems, sorted({y for y, _ in table.months()}))
    else:
        raise CLIError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    ingest.write_flows(out, apply_weights(table, model))


def privacy_params(settings: Settings, args=None) -> PrivacyParams:
    a = args or argparse.Namespace()
    eps = float(settings.get("privatize", "epsilon", getattr(a, "epsilon", None), 10.0))
    delta = float(settings.get("privatize", "delta", getattr(a, "delta", None), 1e-9))
    sens = settings.get("privatize", "sensitivity", getattr(a, "sensitivity", None))
    if sens is None:
        years = int(settings.get("privatize", "release_years", None, 10))
        aggs = int(settings.get("privatize", "release_aggregates", None, 3))
        sens = sensitivity_from_release(years, aggs)
    return PrivacyParams(eps, delta, float(sens))


def run_privatize(settings: Settings, flows: Path, out: Path, params: PrivacyParams,
                  seed: int, workers: int) -> None:
    table = ingest.load_flows(_require(flows, "flows file"))
    if table.stage != "weighted":
        raise CLIError(f"privatize needs a weighted table (run weight first); "
                       f"got stage {table.stage!r}")
    released = privatize(table, params.sigma, seed, workers=workers)
    log.info("privatize: sigma=%.4f seed=%d", params.sigma, seed)
    ingest.write_flows(out, released)


def run_validate(settings: Settings, flows: Path, reference: Path, stats: Path,
                 hdi: Path, out: Path, year: Optional[int], sci: Optional[Path]) -> None:
    table = ingest.load_flows(_require(flows, "flows file"))
    ref = ingest.load_reference(_require(reference, "reference file"))
    population = {(s.country, s.year): s.population
                  for s in ingest.load_stats(_require(stats, "stats file"))}
    hdi_map = ingest.load_hdi(_require(hdi, "HDI file"))
    annual = annualize(table)
    report = validation_report(annual, ref, population, hdi_map, table.universe, year)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv(), encoding="utf-8")
    text = report.to_text()
    if sci is not None:
        sci_map = ingest.load_sci(_require(sci, "SCI file"))
        intensity = migration_intensity(annual, population)
        rows = []
        for y in sorted({k[2] for k in intensity}):
            for subset_name, subset in (("all", None), ("oecd", OECD)):
                r, n = sci_correlation(intensity, sci_map, y, subset)
                rows.append((y, subset_name, n, "" if r is None else repr(r)))
                text += f"SCI correlation {y} {subset_name}: n={n} r=" + \
                        ("n/a" if r is None else f"{r:.3f}") + "\n"
        sci_out = out.with_name(out.stem + "_sci.csv")
        with sci_out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "subset", "n", "r"])
            w.writerows(rows)
    out.with_suffix(".txt").write_text(text, encoding="utf-8")


def run_diagnose(settings: Settings, traces: Path, out: Path, params: DetectionParams,
                 epsilons, universe) -> None:
    loaded = ingest.load_traces(_require(traces, "traces file"), universe)
    sweep = epsilon_sweep(loaded, params, epsilons, len(universe))
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "n_users", "n_segments", "share_modal_ge_90",
                    "share_top2_diff_lt_20", "mean_complexity", "n_migrants_detected"])
        for eps, rep in sweep.items():
            w.writerow([eps, rep.n_users, rep.n_segments, repr(rep.share_modal_ge_90),
                        repr(rep.share_top2_diff_lt_20), repr(rep.mean_complexity),
                        rep.n_migrants_detected])


# -- argument parsing --------------------------------------------------------

def _epsilons(value) -> list[int]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return [int(v) for v in value]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="migflow", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (flags override its keys)")
    common.add_argument("--seed", type=int, help="top-level random seed")
    common.add_argument("--workers", type=int, help="parallel workers (results do not depend on it)")
    common.add_argument("--universe", help="comma-separated country codes, or 'default'")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic world")
    s.add_argument("--out-dir", help="directory for the generated CSV files")

    s = sub.add_parser("detect", parents=[common], help="detect migration events in traces")
    s.add_argument("--traces", help="traces CSV (user_id,date,country)")
    s.add_argument("--out", help="events CSV to write")
    s.add_argument("--preset", choices=sorted(PRESETS), help="detection parameter preset")
    s.add_argument("--epsilon", type=int, help="max gap between in-country days")
    s.add_argument("--min-days", type=int, help="minimum segment span in days")
    s.add_argument("--prop-days", type=float, help="minimum observed share of the span")
    s.add_argument("--max-gap", type=int, help="max days between adjacent segments")
    s.add_argument("--assume-sorted", action="store_true", default=None,
                   help="stream a file grouped by user with increasing dates")

    s = sub.add_parser("aggregate", parents=[common], help="build the raw flow table")
    s.add_argument("--events", help="events CSV")
    s.add_argument("--out", help="flow CSV to write")
    s.add_argument("--start", help="first month, YYYY-MM")
    s.add_argument("--end", help="last month, YYYY-MM")
    s.add_argument("--exclusions", help="exclusions CSV")
    s.add_argument("--impute", action="append", help="month to impute, YYYY-MM (repeatable)")

    s = sub.add_parser("calibrate", parents=[common], help="fit the selection rate per year")
    s.add_argument("--flows", help="raw flow CSV")
    s.add_argument("--reference", help="reference flows CSV")
    s.add_argument("--stats", help="population/platform users CSV")
    s.add_argument("--gni", help="GNI per capita CSV")
    s.add_argument("--destination", help="calibration destination country")
    s.add_argument("--out", help="selection-rate CSV (year,r)")
    s.add_argument("--curve", help="error-curve CSV (year,r,abs_error)")

    s = sub.add_parser("weight", parents=[common], help="apply a weighting scheme")
    s.add_argument("--flows", help="raw flow CSV")
    s.add_argument("--out", help="weighted flow CSV")
    s.add_argument("--scheme", choices=SCHEMES, help="weighting scheme")
    s.add_argument("--stats", help="population/platform users CSV")
    s.add_argument("--gni", help="GNI per capita CSV")
    s.add_argument("--rates", help="selection-rate CSV from calibrate")
    s.add_argument("--reference", help="reference flows CSV (coefficient scheme)")
    s.add_argument("--destination", help="calibration destination (coefficient scheme)")
    s.add_argument("--beta", type=float, help="fixed coefficient instead of fitting one")
    s.add_argument("--marginals", help="raking target marginals CSV")
    s.add_argument("--seeds", help="raking seed counts CSV")

    s = sub.add_parser("privatize", parents=[common], help="add calibrated Gaussian noise")
    s.add_argument("--flows", help="weighted flow CSV")
    s.add_argument("--out", help="released flow CSV")
    s.add_argument("--epsilon", type=float, help="privacy loss epsilon")
    s.add_argument("--delta", type=float, help="failure probability delta")
    s.add_argument("--sensitivity", type=float, help="L2 sensitivity")

    s = sub.add_parser("validate", parents=[common], help="compare flows with reference data")
    s.add_argument("--flows", help="flow CSV to validate")
    s.add_argument("--reference", help="reference flows CSV")
    s.add_argument("--stats", help="population CSV")
    s.add_argument("--hdi", help="HDI CSV")
    s.add_argument("--sci", help="SCI CSV (adds the social-connectedness correlation)")
    s.add_argument("--year", type=int, help="restrict to one year")
    s.add_argument("--out", help="report CSV (a .txt twin is written alongside)")

    s = sub.add_parser("diagnose", parents=[common], help="epsilon sweep of segment diagnostics")
    s.add_argument("--traces", help="traces CSV")
    s.add_argument("--out", help="diagnostics CSV")
    s.add_argument("--preset", choices=sorted(PRESETS), help="base detection preset")
    s.add_argument("--epsilons", help="comma-separated radii, e.g. 30,60,90")

    s = sub.add_parser("pipeline", parents=[common], help="run every stage from one config")
    s.add_argument("--out-dir", help="directory for all stage artifacts")
    return p


def _inputs(settings: Settings, key: str, flag=None, required=True):
    return settings.path("inputs", key, flag, required)


def dispatch(args) -> None:
    settings = Settings.load(args.config)
    workers = int(settings.get(None, "workers", args.workers, 1))
    seed = int(settings.get(None, "seed", args.seed, 0))
    universe = _universe(settings, args.universe)
    cmd = args.command

    if cmd == "synth":
        out_dir = Path(args.out_dir or settings.get(None, "out_dir", None, "."))
        run_synth(settings, out_dir, args.seed)
    elif cmd == "detect":
        assume = bool(settings.get("detect", "assume_sorted", args.assume_sorted, False))
        run_detect(settings, _inputs(settings, "traces", args.traces),
                   _out(settings, args.out, "events.csv"), detection_params(settings, args),
                   workers, assume, universe)
    elif cmd == "aggregate":
        start = parse_year_month(str(settings.get("aggregate", "start", args.start) or _fail("--start")))
        end = parse_year_month(str(settings.get("aggregate", "end", args.end) or _fail("--end")))
        run_aggregate(settings, settings.path(None, "events", args.events, False)
                      or _out(settings, None, "events.csv"),
                      _out(settings, args.out, "raw_flows.csv"), start, end, universe,
                      settings.path("aggregate", "exclusions", args.exclusions, False),
                      _ym_list(settings.get("aggregate", "impute", args.impute)))
    elif cmd == "calibrate":
        grid = _grid(settings)
        run_calibrate(settings, Path(args.flows) if args.flows else _out(settings, None, "raw_flows.csv"),
                      _inputs(settings, "reference", args.reference),
                      _inputs(settings, "stats", args.stats), _inputs(settings, "gni", args.gni),
                      settings.get("calibrate", "destination", args.destination, "NZ"),
                      _out(settings, args.out, "selection_rates.csv"),
                      Path(args.curve) if args.curve else _out(settings, None, "calibration_curve.csv"),
                      grid)
    elif cmd == "weight":
        scheme = settings.get("weight", "scheme", args.scheme, "selection")
        run_weight(settings, Path(args.flows) if args.flows else _out(settings, None, "raw_flows.csv"),
                   _out(settings, args.out, "weighted_flows.csv"), scheme,
                   _inputs(settings, "stats", args.stats, False), _inputs(settings, "gni", args.gni, False),
                   Path(args.rates) if args.rates else _out(settings, None, "selection_rates.csv"),
                   _inputs(settings, "reference", args.reference, False),
                   settings.get("calibrate", "destination", args.destination, "NZ"),
                   _inputs(settings, "marginals", args.marginals, False),
                   _inputs(settings, "seeds", args.seeds, False),
                   settings.get("weight", "beta", args.beta))
    elif cmd == "privatize":
        run_privatize(settings, Path(args.flows) if args.flows else _out(settings, None, "weighted_flows.csv"),
                      _out(settings, args.out, "released_flows.csv"),
                      privacy_params(settings, args), seed, workers)
    elif cmd == "validate":
        year = settings.get("validate", "year", args.year)
        run_validate(settings, Path(args.flows) if args.flows else _out(settings, None, "released_flows.csv"),
                     _inputs(settings, "reference", args.reference),
                     _inputs(settings, "stats", args.stats), _inputs(settings, "hdi", args.hdi),
                     _out(settings, args.out, "validation.csv"),
                     None if year in (None, "") else int(year),
                     _inputs(settings, "sci", args.sci, False))
    elif cmd == "diagnose":
        run_diagnose(settings, _inputs(settings, "traces", args.traces),
                     _out(settings, args.out, "diagnostics.csv"), detection_params(settings, args),
                     _epsilons(settings.get("diagnose", "epsilons", args.epsilons, [30, 60, 90])),
                     universe)
    elif cmd == "pipeline":
        run_pipeline(settings, args, seed, workers, universe)


def _fail(flag: str):
    raise CLIError(f"missing required setting {flag}")


def _grid(settings: Settings):
    return default_grid(float(settings.get("calibrate", "grid_min", None, 0.0)),
                        float(settings.get("calibrate", "grid_max", None, 3.0)),
                        float(settings.get("calibrate", "grid_step", None, 0.01)))


def run_pipeline(settings: Settings, args, seed: int, workers: int, universe) -> dict:
    """synth (unless traces are given) -> detect -> aggregate -> calibrate -> weight
    -> privatize -> validate -> diagnose, every artifact under ``out_dir``."""
    out_dir = Path(args.out_dir or settings.get(None, "out_dir", None, "pipeline_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {}
    traces = _inputs(settings, "traces", None, False)
    if traces is None:
        inputs.update(run_synth(settings, out_dir / "synth", seed))
    for key in ("traces", "stats", "gni", "hdi", "reference", "sci", "marginals", "seeds"):
        p = _inputs(settings, key, None, False)
        if p is not None:
            inputs[key] = p
    for key in ("traces", "stats", "gni", "hdi", "reference"):
        if key not in inputs:
            raise CLIError(f"pipeline needs [inputs] {key} when synth is skipped")

    art = {name: out_dir / f"{name}.csv" for name in (
        "events", "raw_flows", "selection_rates", "calibration_curve", "weighted_flows",
        "released_flows", "validation", "diagnostics")}
    params = detection_params(settings)
    run_detect(settings, inputs["traces"], art["events"], params, workers,
               bool(settings.get("detect", "assume_sorted", None, False)), universe)
    start = parse_year_month(str(settings.get("aggregate", "start") or _fail("[aggregate] start")))
    end = parse_year_month(str(settings.get("aggregate", "end") or _fail("[aggregate] end")))
    run_aggregate(settings, art["events"], art["raw_flows"], start, end, universe,
                  settings.path("aggregate", "exclusions", None, False),
                  _ym_list(settings.get("aggregate", "impute")))
    scheme = settings.get("weight", "scheme", None, "selection")
    destination = settings.get("calibrate", "destination", None, "NZ")
    if scheme == "selection":
        run_calibrate(settings, art["raw_flows"], inputs["reference"], inputs["stats"],
                      inputs["gni"], destination, art["selection_rates"],
                      art["calibration_curve"], _grid(settings))
    run_weight(settings, art["raw_flows"], art["weighted_flows"], scheme, inputs.get("stats"),
               inputs.get("gni"), art["selection_rates"], inputs.get("reference"), destination,
               inputs.get("marginals"), inputs.get("seeds"), settings.get("weight", "beta"))
    run_privatize(settings, art["weighted_flows"], art["released_flows"],
                  privacy_params(settings), seed, workers)
    year = settings.get("validate", "year")
    run_validate(settings, art["released_flows"], inputs["reference"], inputs["stats"],
                 inputs["hdi"], art["validation"], None if year in (None, "") else int(year),
                 inputs.get("sci"))
    run_diagnose(settings, inputs["traces"], art["diagnostics"], params,
                 _epsilons(settings.get("diagnose", "epsilons", None, [30, 60, 90])), universe)
    manifest = {k: v.name for k, v in art.items()}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return art


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except CLIError as exc:
        print(f"migflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"migflow {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
