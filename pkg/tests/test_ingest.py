import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gvarsv.core import CountrySpec, Panel, VariableKind, WeightMatrix, parse_quarter
from gvarsv.ingest import (
    EA_MEMBERS,
    IngestError,
    TradeFlows,
    aggregate_euro_area,
    aggregate_trade_flows,
    build_weight_matrix,
    foreign_variables,
    load_panel,
    load_trade_flows,
    read_panel_csv,
    read_weight_matrix,
    transform,
    write_panel_csv,
    write_weight_matrix,
)

R, Y, P, F = (VariableKind.SHORT_RATE, VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION,
              VariableKind.REAL_FX_GROWTH)


def _write_levels(path, data, start="2000Q1"):
    q0 = parse_quarter(start)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["country", "variable", "quarter", "value"])
        for (c, v), vals in data.items():
            for t, x in enumerate(vals):
                y, r = divmod(q0 + t, 4)
                wr.writerow([c, v, f"{y}Q{r + 1}", "" if x is None else x])


def _two_country(tmp_path, T=12):
    t = np.arange(T)
    data = {
        ("USA", "rate"): 2.0 + 0.1 * t,
        ("USA", "gdp"): 100 * 1.01 ** t,
        ("USA", "cpi"): 50 * 1.005 ** t,
        ("GBR", "rate"): 3.0 + 0.0 * t,
        ("GBR", "gdp"): 80 * 1.02 ** t,
        ("GBR", "cpi"): 40 * 1.01 ** t,
        ("GBR", "fx"): 0.6 * 1.0 ** t,
    }
    path = tmp_path / "levels.csv"
    _write_levels(path, {k: list(map(float, v)) for k, v in data.items()})
    specs = (CountrySpec.standard("USA", origin=True), CountrySpec.standard("GBR"))
    return path, specs


def test_load_and_transform_growth_rates(tmp_path):
    path, specs = _two_country(tmp_path)
    raw = load_panel(path, specs)
    assert raw.T == 12 and not raw.transformed
    panel = transform(raw, numeraire="USA")
    assert panel.transformed and panel.T == 8
    assert panel.variables["USA"] == ("ShortRate", "OutputGrowth", "Inflation")
    np.testing.assert_allclose(panel.series("USA", "OutputGrowth"), 400 * np.log(1.01))
    np.testing.assert_allclose(panel.series("GBR", "Inflation"), 400 * np.log(1.01))
    # constant nominal fx, faster local inflation: real appreciation of sterling
    np.testing.assert_allclose(panel.series("GBR", "RealFxGrowth"),
                               400 * (np.log(1.005) - np.log(1.01)))
    np.testing.assert_array_equal(panel.series("USA", "ShortRate"), 2.0 + 0.1 * np.arange(4, 12))


def test_load_is_deterministic(tmp_path):
    path, specs = _two_country(tmp_path)
    a = transform(load_panel(path, specs), numeraire="USA")
    b = transform(load_panel(path, specs), numeraire="USA")
    for c in a.countries:
        assert a.values[c].tobytes() == b.values[c].tobytes()


def test_missing_series_is_named(tmp_path):
    path = tmp_path / "levels.csv"
    _write_levels(path, {("USA", "rate"): [1.0] * 8, ("USA", "gdp"): [1.0] * 8})
    with pytest.raises(IngestError, match="USA/cpi"):
        load_panel(path, (CountrySpec.standard("USA", origin=True),))


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_panel("/nonexistent/levels.csv", (CountrySpec.standard("USA", origin=True),))


def test_nonpositive_level_rejected(tmp_path):
    path = tmp_path / "levels.csv"
    _write_levels(path, {("USA", "rate"): [1.0] * 8, ("USA", "gdp"): [1.0] * 7 + [0.0],
                         ("USA", "cpi"): [1.0] * 8})
    raw = load_panel(path, (CountrySpec.standard("USA", origin=True),))
    with pytest.raises(IngestError, match="nonpositive"):
        transform(raw)


def test_interior_gap_recorded_leading_gap_not(tmp_path):
    path = tmp_path / "levels.csv"
    gdp = [None, None] + [1.0] * 4 + [None] + [1.0] * 3
    _write_levels(path, {("USA", "rate"): [1.0] * 10, ("USA", "gdp"): gdp,
                         ("USA", "cpi"): [1.0] * 10})
    raw = load_panel(path, (CountrySpec.standard("USA", origin=True),))
    assert [(c, v) for c, v, _ in raw.gaps] == [("USA", "gdp")]
    assert np.isnan(raw.series("USA", "gdp")[0])


def test_shadow_rate_override(tmp_path):
    path, specs = _two_country(tmp_path)
    shadow = tmp_path / "shadow.csv"
    shadow.write_text("country,quarter,value\nUSA,2001Q1,-1.5\n")
    raw = load_panel(path, specs, shadow_rates=shadow)
    assert raw.series("USA", "rate")[4] == -1.5
    assert raw.series("USA", "rate")[5] == pytest.approx(2.5)


# ---------------------------------------------------------------- weights

def test_weight_matrix_two_country():
    W = build_weight_matrix(TradeFlows(("A", "B"), np.array([[0.0, 5.0], [7.0, 0.0]])))
    np.testing.assert_array_equal(W.w, [[0, 1], [1, 0]])


def test_weight_matrix_three_country():
    W = build_weight_matrix(TradeFlows(("A", "B", "C"),
                                       np.array([[0.0, 1, 3], [2, 0, 2], [1, 1, 0]])))
    np.testing.assert_array_equal(W.w[0], [0, 0.25, 0.75])
    assert np.all(np.diag(W.w) == 0)


def test_isolated_country():
    with pytest.raises(IngestError, match="isolated"):
        build_weight_matrix(TradeFlows(("A", "B", "C"), np.array([[0.0, 1, 1], [0, 0, 0],
                                                                    [1, 1, 0]])))


def test_trade_flows_rejects_negative_and_diagonal():
    with pytest.raises(IngestError):
        TradeFlows(("A", "B"), np.array([[0.0, -1], [1, 0]]))
    with pytest.raises(IngestError):
        TradeFlows(("A", "B"), np.array([[1.0, 1], [1, 0]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e6), min_size=12, max_size=12))
def test_weight_rows_stochastic(vals):
    f = np.zeros((4, 4))
    f[~np.eye(4, dtype=bool)] = vals
    W = build_weight_matrix(TradeFlows(("A", "B", "C", "D"), f))
    assert np.all(np.diag(W.w) == 0)
    assert np.all(np.abs(W.w.sum(axis=1) - 1) <= 1e-12)


def test_trade_basis_switch(tmp_path):
    path = tmp_path / "trade.csv"
    path.write_text("reporter,partner,exports,imports\nA,B,1,3\nB,A,2,2\nA,C,3,1\nC,A,1,1\n"
                    "B,C,1,1\nC,B,1,1\n")
    tot = build_weight_matrix(load_trade_flows(path, basis="total"))
    exp = build_weight_matrix(load_trade_flows(path, basis="exports"))
    np.testing.assert_allclose(tot.w[0], [0, 0.5, 0.5])
    np.testing.assert_allclose(exp.w[0], [0, 0.25, 0.75])


def test_trade_aggregation_drops_intra_region():
    order = ("USA", "AUT", "BEL", "GBR")
    f = np.array([[0, 1, 2, 3], [4, 0, 10, 5], [6, 10, 0, 7], [8, 9, 1, 0]], dtype=float)
    agg = aggregate_trade_flows(TradeFlows(order, f), members=("AUT", "BEL"), name="EA")
    assert agg.order == ("USA", "EA", "GBR")
    np.testing.assert_array_equal(agg.flows, [[0, 3, 3], [10, 0, 12], [8, 10, 0]])


def test_weight_matrix_csv_roundtrip(tmp_path):
    W = WeightMatrix(("A", "B", "C"), np.array([[0, 1 / 3, 2 / 3], [0.5, 0, 0.5], [0.1, 0.9, 0]]))
    write_weight_matrix(W, tmp_path / "w.csv")
    back = read_weight_matrix(tmp_path / "w.csv")
    assert back.order == W.order and back.w.tobytes() == W.w.tobytes()


# --------------------------------------------------------- euro-area aggregation

def _ea_panel(member_values, T=6):
    countries = tuple(EA_MEMBERS)
    values = {c: np.column_stack([np.full(T, v), np.full(T, 2 * v)])
              for c, v in zip(countries, member_values)}
    return Panel(countries, {c: ("Inflation", "OutputGrowth") for c in countries},
                 tuple(range(8000, 8000 + T)), values, transformed=True)


def test_euro_area_identical_members():
    ea = aggregate_euro_area(_ea_panel([1.5] * 8), dict(zip(EA_MEMBERS, [1 / 8] * 8)))
    assert ea.countries == ("EA",)
    np.testing.assert_allclose(ea.series("EA", "Inflation"), 1.5, rtol=0, atol=1e-14)


def test_euro_area_degenerate_weights():
    vals = [float(i + 1) for i in range(8)]
    ea = aggregate_euro_area(_ea_panel(vals), dict(zip(EA_MEMBERS, [1.0] + [0.0] * 7)))
    np.testing.assert_array_equal(ea.series("EA", "OutputGrowth"), 2.0)


def test_euro_area_two_members():
    T = 4
    panel = Panel(("AUT", "BEL"), {"AUT": ("Inflation",), "BEL": ("Inflation",)},
                  tuple(range(8000, 8000 + T)),
                  {"AUT": np.ones((T, 1)), "BEL": np.full((T, 1), 3.0)}, transformed=True)
    ea = aggregate_euro_area(panel, {"AUT": 0.5, "BEL": 0.5}, members=("AUT", "BEL"))
    np.testing.assert_array_equal(ea.series("EA", "Inflation"), 2.0)


def test_euro_area_weights_must_sum_to_one():
    with pytest.raises(IngestError, match="sum"):
        aggregate_euro_area(_ea_panel([1.0] * 8), dict(zip(EA_MEMBERS, [0.126] * 8)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=8, max_size=8),
       st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_euro_area_is_weighted_mean(raw_w, vals):
    w = np.array(raw_w) / np.sum(raw_w)
    w[-1] = 1.0 - w[:-1].sum()
    if w[-1] < 0:
        return
    ea = aggregate_euro_area(_ea_panel(vals), dict(zip(EA_MEMBERS, w)))
    np.testing.assert_allclose(ea.series("EA", "Inflation"), np.dot(w, vals), atol=1e-12)


# ------------------------------------------------------------ foreign variables

def _panel3(vals):
    T = 5
    specs = (CountrySpec("A", (R, Y), (Y,)), CountrySpec("B", (R, Y), (Y,)),
             CountrySpec("C", (R, Y), (Y,)))
    values = {c: np.column_stack([np.zeros(T), np.full(T, v)]) for c, v in zip("ABC", vals)}
    return specs, Panel(tuple("ABC"), {c: ("ShortRate", "OutputGrowth") for c in "ABC"},
                        tuple(range(8000, 8000 + T)), values, transformed=True)


def test_foreign_single_partner():
    specs, panel = _panel3([1.0, 2.0, 4.0])
    W = WeightMatrix(tuple("ABC"), np.array([[0, 0, 1.0], [1.0, 0, 0], [0, 1.0, 0]]))
    np.testing.assert_array_equal(foreign_variables(panel, W, specs[0])[:, 0], 4.0)


def test_foreign_equal_weights():
    specs, panel = _panel3([1.0, 2.0, 4.0])
    W = WeightMatrix(tuple("ABC"), np.array([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    np.testing.assert_array_equal(foreign_variables(panel, W, specs[0])[:, 0], 3.0)


def test_foreign_missing_partner_variable_named():
    spec = CountrySpec("A", (R, Y), (P,))
    _, panel = _panel3([1.0, 2.0, 4.0])
    W = WeightMatrix(tuple("ABC"), np.array([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    with pytest.raises(IngestError, match="partner B"):
        foreign_variables(panel, W, spec)


def test_origin_foreign_set_has_no_rate():
    assert R not in CountrySpec.standard("USA", origin=True).foreign_vars


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_foreign_variables_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    specs, base = _panel3([0, 0, 0])
    mk = lambda arrs: Panel(base.countries, base.variables, base.quarters, arrs, transformed=True)
    v1 = {c: rng.standard_normal((5, 2)) for c in "ABC"}
    v2 = {c: rng.standard_normal((5, 2)) for c in "ABC"}
    W = WeightMatrix(tuple("ABC"), np.array([[0, 0.3, 0.7], [0.2, 0, 0.8], [0.6, 0.4, 0]]))
    mix = mk({c: alpha * v1[c] + beta * v2[c] for c in "ABC"})
    lhs = foreign_variables(mix, W, specs[1])
    rhs = alpha * foreign_variables(mk(v1), W, specs[1]) + beta * foreign_variables(mk(v2), W, specs[1])
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_panel_csv_roundtrip(tmp_path, desk_truth):
    panel = desk_truth.panel
    write_panel_csv(panel, tmp_path / "p.csv")
    back = read_panel_csv(tmp_path / "p.csv", training_split=panel.training_split)
    assert back.countries == panel.countries and back.quarters == panel.quarters
    assert back.transformed
    for c in panel.countries:
        assert back.values[c].tobytes() == panel.values[c].tobytes()
