import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migflow.model import FlowTable, ModelError
from migflow.weighting import (
    CountryYearStats,
    RakingProblem,
    WeightingError,
    WeightModel,
    apply_weights,
    calibrate_selection_rate,
    coefficient_weights,
    default_grid,
    destination_year_inflows,
    fit_coefficient,
    income_index,
    index_stats,
    penetration_weights,
    rake,
    raking_weights,
    raw_weights,
    selection_weight,
    selection_weights,
)

AGES = ("18-24", "25-34", "35-54", "55+")


# -- income and simple schemes -----------------------------------------------

def test_income_index_examples():
    assert income_index({"NZ": 42_000}) == {"NZ": 1.0}
    assert income_index({"A": 100, "B": 50}) == {"A": 1.0, "B": 0.5}
    with pytest.raises(WeightingError):
        income_index({})
    with pytest.raises(WeightingError):
        income_index({"A": 0})


def test_income_index_random_order():
    rng = np.random.default_rng(0)
    gni = {f"{chr(65 + i // 26)}{chr(65 + i % 26)}": float(v)
           for i, v in enumerate(rng.lognormal(9, 1, 50))}
    inc = income_index(gni)
    assert max(inc, key=inc.get) == max(gni, key=gni.get)
    assert inc[max(gni, key=gni.get)] == 1.0
    order = sorted(gni, key=gni.get)
    assert [inc[c] for c in order] == sorted(inc.values())


def stats(country, year, pop, users):
    return CountryYearStats(country, year, pop, users)


def test_penetration_examples():
    m = penetration_weights([stats("MX", 2022, 1e6, 5e5), stats("US", 2022, 1e6, 1e6)])
    assert m.weight("MX", 2022) == 2.0
    assert m.weight("US", 2022) == 1.0
    bad = penetration_weights([stats("KP", 2022, 1e6, 0)])
    assert ("KP", 2022) in bad.unweightable and not bad.multipliers


@given(st.floats(1e3, 1e9), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_penetration_weight_decreases_in_penetration(pop, p1, p2):
    lo, hi = sorted((p1, p2))
    a = penetration_weights([stats("AA", 2020, pop, lo * pop)]).weight("AA", 2020)
    b = penetration_weights([stats("AA", 2020, pop, hi * pop)]).weight("AA", 2020)
    assert a >= b


def test_stats_invariants():
    with pytest.raises(ModelError):
        stats("AA", 2020, 0, 0)
    with pytest.raises(ModelError):
        stats("AA", 2020, 10, 11)
    with pytest.raises(ModelError):
        stats("AA", 2020, 10, -1)


def test_selection_weight_examples():
    assert selection_weight(1.0, 0.25, 0.4) == pytest.approx(4.0)
    assert selection_weight(0.0, 0.25, 0.4) == pytest.approx(1 / 0.4)
    assert selection_weight(1e-12, 0.25, 0.4) == pytest.approx(2.5, rel=1e-9)
    assert selection_weight(0.5, 0.2, 0.4) == pytest.approx(10 / 3, rel=1e-15)


@given(st.floats(0.0, 1.0), st.floats(0.001, 1.0), st.floats(0.001, 3.0))
def test_selection_denominator_bounds(inc, pen, r):
    w = selection_weight(inc, pen, r)
    denom = 1 / w
    assert min(pen, r) * (1 - 1e-12) <= denom <= max(pen, r) * (1 + 1e-12)


def test_selection_with_full_income_equals_penetration():
    rng = np.random.default_rng(1)
    st_ = [stats(c, y, float(p), float(p * f)) for c, p, f in
           zip(["AA", "BB", "CC"], rng.uniform(1e5, 1e7, 3), rng.uniform(0.1, 0.9, 3))
           for y in (2020, 2021)]
    sel = selection_weights(st_, {"AA": 1.0, "BB": 1.0, "CC": 1.0}, {2020: 0.4, 2021: 1.3})
    pen = penetration_weights(st_)
    assert dict(sel.multipliers) == dict(pen.multipliers)


# -- calibration -------------------------------------------------------------

def calibration_fixture(rng, n=25, year=2020):
    origins = [f"O{chr(65 + i)}" for i in range(n)]
    st_ = index_stats([CountryYearStats(o, year, 1e7, float(rng.uniform(0.05, 0.9)) * 1e7)
                       for o in origins])
    income = {o: float(v) for o, v in zip(origins, rng.uniform(0.01, 1.0, n))}
    income[origins[0]] = 1.0
    raw = {o: float(rng.integers(1, 500)) for o in origins}
    return origins, st_, income, raw


def test_exact_fit_recovers_grid_point():
    rng = np.random.default_rng(2)
    origins, st_, income, raw = calibration_fixture(rng)
    ref = {o: selection_weight(income[o], st_[(o, 2020)].penetration, 1.23) * raw[o]
           for o in origins}
    cal = calibrate_selection_rate(raw, ref, st_, income, 2020)
    assert cal.r == 1.23
    assert cal.min_error == pytest.approx(0.0, abs=1e-6)


def test_calibration_is_grid_argmin_with_smallest_tie():
    rng = np.random.default_rng(3)
    origins, st_, income, raw = calibration_fixture(rng)
    ref = {o: float(rng.integers(1, 2000)) for o in origins}
    cal = calibrate_selection_rate(raw, ref, st_, income, 2020)
    grid = default_grid()
    assert len(grid) == 301 and grid[0] == 0 and grid[-1] == 3.0
    recheck = []
    for r in grid:
        e = 0.0
        for o in origins:
            pen = st_[(o, 2020)].penetration
            e += abs(raw[o] / (income[o] * pen + (1 - income[o]) * r) - ref[o])
        recheck.append(e)
    recheck = np.array(recheck)
    assert np.allclose(cal.errors, recheck, rtol=1e-12)
    assert cal.r == grid[int(np.argmin(recheck))]
    # all-rich origins make the error flat in r; the smallest r wins
    flat = calibrate_selection_rate(raw, ref, st_, {o: 1.0 for o in origins}, 2020)
    assert flat.r == 0.0


def test_calibration_needs_overlap():
    rng = np.random.default_rng(4)
    origins, st_, income, raw = calibration_fixture(rng)
    with pytest.raises(WeightingError):
        calibrate_selection_rate(raw, {"ZZ": 3.0}, st_, income, 2020)


def test_destination_year_inflows_skips_missing():
    t = FlowTable({("AA", "NZ", 2020, 1): 2, ("AA", "NZ", 2020, 2): 3, ("BB", "NZ", 2021, 1): 9,
                   ("NZ", "AA", 2020, 1): 5}, "raw", ("AA", "BB", "NZ"), (2020, 1), (2021, 12),
                  frozenset({("BB", "NZ", 2020, 4)}))
    assert destination_year_inflows(t, "NZ", 2020) == {"AA": 5, "BB": 0}


# -- coefficient -------------------------------------------------------------

def test_coefficient_examples():
    assert fit_coefficient([1, 2, 3], [2, 4, 6]) == 2.0
    assert fit_coefficient([1, 2], [3, 5]) == pytest.approx(2.6, rel=1e-15)
    with pytest.raises(WeightingError):
        fit_coefficient([0, 0], [1, 2])


@given(st.lists(st.tuples(st.floats(0.1, 1e4), st.floats(0, 1e5)), min_size=1, max_size=50),
       st.floats(0.01, 100))
def test_coefficient_scale_equivariance(points, c):
    x = [p[0] for p in points]
    y = [p[1] for p in points]
    b = fit_coefficient(x, y)
    assert fit_coefficient(x, [c * v for v in y]) == pytest.approx(c * b, rel=1e-9, abs=1e-12)
    assert fit_coefficient([c * v for v in x], y) == pytest.approx(b / c, rel=1e-9, abs=1e-12)


def test_coefficient_weights_uniform():
    m = coefficient_weights(11.36, [("CN", 2020), ("CN", 2021)])
    assert set(m.multipliers.values()) == {11.36}
    with pytest.raises(WeightingError):
        coefficient_weights(0, [("CN", 2020)])


# -- raking ------------------------------------------------------------------

def problem_from_arrays(seed, age_t, sex_t, reg_t, tol=1e-10):
    ages = AGES[:seed.shape[0]]
    sexes = ("f", "m", "x")[:seed.shape[1]]
    regions = ("north", "south", "east", "west")[:seed.shape[2]]
    cells = {(a, s, r): float(seed[i, j, k]) for i, a in enumerate(ages)
             for j, s in enumerate(sexes) for k, r in enumerate(regions)}
    targets = {"age_group": dict(zip(ages, map(float, age_t))),
               "sex": dict(zip(sexes, map(float, sex_t))),
               "region": dict(zip(regions, map(float, reg_t)))}
    return RakingProblem(cells, targets, tolerance=tol, max_iterations=5000)


def test_rake_fixed_point():
    seed = np.arange(1, 25, dtype=float).reshape(4, 3, 2)
    p = problem_from_arrays(seed, seed.sum((1, 2)), seed.sum((0, 2)), seed.sum((0, 1)))
    res = rake(p)
    assert res.converged and res.iterations == 0
    assert set(res.weights.values()) == {1.0}


def test_rake_uniform_two_by_two_is_independence_table():
    seed = np.ones((2, 2, 1))
    p = problem_from_arrays(seed, [30, 70], [40, 60], [100])
    res = rake(p)
    assert res.converged
    for (a, s, _), v in res.fitted.items():
        row = {"18-24": 30, "25-34": 70}[a]
        col = {"f": 40, "m": 60}[s]
        assert v == row * col / 100


def test_rake_random_problems_match_marginals():
    rng = np.random.default_rng(6)
    for _ in range(30):
        seed = rng.uniform(0.5, 50, size=(4, 3, 2))
        truth = seed * rng.uniform(0.5, 2.0, size=seed.shape)
        p = problem_from_arrays(seed, truth.sum((1, 2)), truth.sum((0, 2)), truth.sum((0, 1)))
        res = rake(p)
        assert res.converged
        fit = np.array([[[res.fitted[(a, s, r)] for r in ("north", "south")]
                         for s in ("f", "m", "x")] for a in AGES])
        for axis, target in ((0, truth.sum((1, 2))), (1, truth.sum((0, 2))),
                             (2, truth.sum((0, 1)))):
            margin = fit.sum(axis=tuple(a for a in range(3) if a != axis))
            assert np.all(np.abs(margin - target) <= 1e-6 * np.maximum(target, 1))


def test_rake_preserves_zeros_and_rejects_bad_input():
    seed = np.ones((2, 2, 1))
    seed[0, 0, 0] = 0
    res = rake(problem_from_arrays(seed, [30, 70], [40, 60], [100]))
    assert res.fitted[("18-24", "f", "north")] == 0
    assert res.weights[("18-24", "f", "north")] == 0
    with pytest.raises(WeightingError, match="inconsistent"):
        rake(problem_from_arrays(np.ones((2, 2, 1)), [30, 70], [40, 61], [100]))
    seed = np.ones((2, 2, 1))
    seed[0] = 0
    with pytest.raises(WeightingError, match="support"):
        rake(problem_from_arrays(seed, [30, 70], [40, 60], [100]))


def test_rake_flags_non_convergence():
    # a zero pattern that makes the targets unreachable
    seed = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
    p = problem_from_arrays(seed, [30, 70], [70, 30], [100])
    p = RakingProblem(p.cells, p.targets, tolerance=1e-10, max_iterations=50)
    res = rake(p)
    assert not res.converged and res.iterations == 50


def test_raking_multiplier_is_user_weighted_mean():
    seed = np.array([[[10.0], [30.0]], [[20.0], [40.0]]])
    p = problem_from_arrays(seed, [200, 300], [250, 250], [500])
    res = rake(p)
    model = raking_weights({"AA": p}, [2020, 2021])
    expected = sum(res.weights[k] * n for k, n in p.cells.items()) / sum(p.cells.values())
    assert model.weight("AA", 2020) == pytest.approx(expected, rel=1e-12)
    # with seeds as the composition the multiplier is total target / total users
    assert expected == pytest.approx(500 / 100, rel=1e-9)
    comp = {"AA": {("18-24", "f", "north"): 1.0}}
    assert raking_weights({"AA": p}, [2020], comp).weight("AA", 2020) == \
        pytest.approx(res.weights[("18-24", "f", "north")])


# -- apply_weights -----------------------------------------------------------

UNI = ("MX", "US", "GB")


def test_apply_weights_examples():
    t = FlowTable({("MX", "US", 2022, 3): 5, ("US", "MX", 2022, 3): 2}, "raw", UNI,
                  (2022, 1), (2022, 12))
    ones = raw_weights([(c, 2022) for c in UNI])
    assert dict(apply_weights(t, ones).entries) == dict(t.entries)
    assert apply_weights(t, ones).stage == "weighted"
    m = WeightModel("penetration", {("MX", 2022): 3.0, ("US", 2022): 1.5})
    out = apply_weights(t, m)
    assert out.get(("MX", "US", 2022, 3)) == 15
    assert out.get(("US", "MX", 2022, 3)) == 3
    with pytest.raises(WeightingError, match="MX"):
        apply_weights(t, WeightModel("raw", {("US", 2022): 1.0}))


@settings(max_examples=50)
@given(st.dictionaries(
    st.tuples(st.sampled_from(UNI), st.sampled_from(UNI), st.sampled_from([2021, 2022]),
              st.integers(1, 12)).filter(lambda k: k[0] != k[1]),
    st.integers(0, 1000), max_size=40),
    st.lists(st.floats(0.1, 50), min_size=6, max_size=6))
def test_apply_weights_total_recount(cells, ws):
    t = FlowTable(cells, "raw", UNI, (2021, 1), (2022, 12))
    keys = [(c, y) for c in UNI for y in (2021, 2022)]
    m = WeightModel("raking", dict(zip(keys, ws)))
    out = apply_weights(t, m)
    expect = sum(v * dict(zip(keys, ws))[(k[0], k[2])] for k, v in cells.items())
    assert math.isclose(out.total(), expect, rel_tol=1e-12, abs_tol=1e-9)
