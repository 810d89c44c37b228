from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shiftlab.errors import MissingDenominator, ZeroActivityTotal
from shiftlab.regress import BasisKind, BasisSpec, fit_from_coefficients
from shiftlab.shift import (
    Activity,
    Denominator,
    GroupKey,
    RedistributionWeights,
    activity_from_records,
    aggregate,
    apply_redistribution,
    band_labels,
    build_shift_rows,
    counterfactual_profit,
    country_sums,
    etr_band_label,
    gross_up_world,
    redistribution_shares,
    shift_dyads,
    shifted_share,
    tax_revenue_loss,
    write_shift_csv,
)

from conftest import meta_row, rec

LOG = fit_from_coefficients(BasisSpec(BasisKind.LOG, 0.0014), {"etr": 5.5093, "log_etr": -1.5176})
LINEAR = fit_from_coefficients(BasisSpec(BasisKind.LINEAR), {"etr": -4.0226})


def test_counterfactual_above_reference_is_booked_profit():
    assert counterfactual_profit(10.0, 0.3, LOG) == 10.0
    assert counterfactual_profit(10.0, 0.25, LOG) == pytest.approx(10.0)


def test_counterfactual_vectorised_and_linear_closed_form():
    pi = np.array([1.0, 2.0, 3.0])
    tau = np.array([0.0, 0.1, 0.4])
    out = counterfactual_profit(pi, tau, LINEAR)
    assert out == pytest.approx(pi * np.exp([-4.0226 * 0.25, -4.0226 * 0.15, 0.0]))


def test_counterfactual_rejects_nonpositive_log_argument():
    fit = fit_from_coefficients(BasisSpec(BasisKind.LOG, 0.0), {"etr": 1.0, "log_etr": -1.0})
    with pytest.raises(ValueError):
        counterfactual_profit(1.0, 0.0, fit)


def test_shifted_share_is_monotone_in_rate():
    tau = np.linspace(0, 0.25, 30)
    s = shifted_share(tau, LOG)
    assert np.all(np.diff(s) <= 1e-15)
    assert s[-1] == pytest.approx(0.0, abs=1e-12)


def test_reference_rate_lowering_reduces_shifting():
    tau = np.array([0.001, 0.05, 0.15])
    assert np.all(shifted_share(tau, LOG, tau_ref=0.2) < shifted_share(tau, LOG, tau_ref=0.25))


def test_redistribution_shares():
    act = {"A": Activity(10, 5, 100, 0), "B": Activity(30, 15, 100, 0)}
    r = redistribution_shares(act)
    assert r["A"] == pytest.approx(0.25 * 0.25 + 0.25 * 0.25 + 0.5 * 0.5)
    assert math.fsum(r.values()) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ZeroActivityTotal):
        redistribution_shares({"A": Activity(0, 0, 0, 0)})
    with pytest.raises(ValueError):
        RedistributionWeights(-1, 1, 1)


def test_weights_are_normalised():
    act = {"A": Activity(1, 2, 3, 0), "B": Activity(3, 2, 1, 0)}
    assert redistribution_shares(act, RedistributionWeights(1, 1, 2)) == pytest.approx(redistribution_shares(act))


def test_activity_ignores_missing_cells():
    recs = [rec("USA", "A", 1.0, employees=math.nan), rec("DEU", "A", 1.0, employees=4.0)]
    act = activity_from_records(recs, {("DEU", "A"): 2.0})
    assert act["A"] == Activity(4.0, 2.0, 200.0, 100.0)
    assert set(activity_from_records(recs, {}, by="dyad")) == {("USA", "A"), ("DEU", "A")}


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.01, 1e3)),
                min_size=2, max_size=30))
def test_redistribution_conserves_profits(data):
    s_hat = {i: d[0] for i, d in enumerate(data)}
    act = {i: Activity(d[1], d[2], d[3]) for i, d in enumerate(data)}
    if sum(d[1] for d in data) == 0 or sum(d[2] for d in data) == 0:
        return
    r = redistribution_shares(act)
    assert abs(math.fsum(r.values()) - 1) <= 1e-9
    dp = apply_redistribution(s_hat, r)
    scale = math.fsum(abs(v) for v in s_hat.values())
    assert abs(math.fsum(dp.values())) <= 1e-9 * max(scale, 1e-300)


def test_gross_up_and_trl():
    assert gross_up_world(49.0, 0.49) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        gross_up_world(1.0, 0.0)
    assert tax_revenue_loss(-100.0, 0.2) == -20.0
    with pytest.raises(ValueError):
        tax_revenue_loss(1.0, 1.5)


def test_shift_dyads_and_country_sums():
    recs = [rec("USA", "BMU", 100.0), rec("DEU", "BMU", 50.0), rec("USA", "FRA", 80.0), rec("USA", "X", 0.0)]
    rates = {("USA", "BMU"): 0.001, ("DEU", "BMU"): 0.01, ("USA", "FRA"): 0.3}
    ds = shift_dyads(recs, rates, LOG)
    assert len(ds) == 3
    pi, ph, sh = country_sums(ds)
    assert pi["BMU"] == 150.0 and sh["FRA"] == 0.0
    assert sh["BMU"] == pytest.approx(pi["BMU"] - ph["BMU"])


def test_shift_rows_and_csv(tmp_path):
    rows = build_shift_rows({"A": 10.0}, {"A": 4.0}, {"A": 6.0, "B": 0.0}, {"A": 0.2, "B": 0.8},
                            {"A": -4.8, "B": 4.8}, {"A": 0.1}, None, {"A": 0.2, "B": 0.3})
    assert [r.country for r in rows] == ["A", "B"]
    assert rows[0].trl_total_etr == pytest.approx(-0.48)
    assert math.isnan(rows[1].trl_total_etr) and math.isnan(rows[0].trl_foreign_etr)
    write_shift_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("country,pi,p_hat,s_hat,r_share,delta_p,trl_total_etr")
    assert lines[2].split(",")[6] == ""


def test_band_labels():
    assert band_labels() == ["<1%", "1-5%", "5-10%", "10-15%", "15-25%", ">25%"]
    assert etr_band_label(0.005) == "<1%" and etr_band_label(0.05) == "5-10%"
    assert etr_band_label(0.3) == ">25%" and etr_band_label(math.nan) == "unknown"


def test_aggregation():
    rows = build_shift_rows({}, {}, {"A": 6.0, "B": 2.0, "C": -1.0}, {}, {"A": -5.0, "B": 1.0, "C": 4.0},
                            {"A": 0.01, "B": 0.2, "C": 0.3})
    bands, detail = aggregate(rows, GroupKey.ETR_BAND, band_rates={"A": 0.005, "B": 0.003, "C": 0.3})
    assert [b.group for b in bands] == ["<1%", ">25%"]
    assert bands[0].share_of_positive == pytest.approx(1.0) and bands[0].n_countries == 2
    assert [d.country for d in detail if d.group == "<1%"] == ["A", "B"]
    meta = {"A": meta_row("A", income="LOW", tax_rev=100.0), "B": meta_row("B", tax_rev=50.0),
            "C": meta_row("C", tax_rev=None)}
    with pytest.raises(MissingDenominator):
        aggregate(rows, GroupKey.INCOME_GROUP, Denominator.TOTAL_TAX_REV, meta)
    groups, _ = aggregate(rows, GroupKey.INCOME_GROUP, Denominator.TOTAL_TAX_REV, meta, skip_missing=True)
    high = next(g for g in groups if g.group == "HIGH")
    assert high.ratio == pytest.approx(0.2 / 50.0)
