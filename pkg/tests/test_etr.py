from __future__ import annotations

import math

import pytest

from shiftlab.errors import InsufficientData, MissingMeta, NoObservations
from shiftlab.etr import (
    EtrMethod,
    RateSource,
    TaxBasis,
    TaxVariable,
    compute_etr,
    compute_wages,
    country_etr,
    dyad_etr,
    filter_regression_sample,
    fit_salary_model,
    resolve_tax_rate,
)

from conftest import meta_row, rec


def test_dyad_etr_bases():
    r = rec("USA", "BMU", 100.0, tax=5.0, tax_paid=3.0)
    assert dyad_etr(r) == 0.05
    assert dyad_etr(r, TaxBasis.CASH) == 0.03
    assert math.isnan(dyad_etr(rec("USA", "BMU", 0.0, tax=0.0)))


def test_weighted_mean_is_profit_weighted():
    recs = [rec("USA", "IRL", 100.0, tax=10.0), rec("DEU", "IRL", 300.0, tax=3.0)]
    (e,) = compute_etr(recs)
    assert e.value == pytest.approx(13.0 / 400.0)
    assert compute_etr(recs, EtrMethod.MEDIAN)[0].value == pytest.approx((0.1 + 0.01) / 2)


def test_foreign_mean_drops_domestic():
    recs = [rec("IRL", "IRL", 100.0, tax=30.0), rec("USA", "IRL", 100.0, tax=5.0)]
    (e,) = compute_etr(recs, EtrMethod.FOREIGN_WEIGHTED_MEAN)
    assert e.value == pytest.approx(0.05)


def test_etr_rejects_all_subgroup():
    with pytest.raises(ValueError):
        compute_etr([rec("USA", "IRL", 1.0, subgroup="ALL")])


def test_country_etr_without_data():
    with pytest.raises(NoObservations):
        country_etr([rec("USA", "IRL", 1.0)], "BMU")


def test_resolve_falls_back_to_statutory():
    meta = {"IRL": meta_row("IRL", cit=0.125), "BMU": meta_row("BMU", cit=0.0)}
    etrs = compute_etr([rec("USA", "IRL", 100.0, tax=5.0)])
    out = resolve_tax_rate(etrs, meta)
    assert out["IRL"].source is RateSource.CBCR_POSITIVE
    assert out["BMU"].source is RateSource.STATUTORY_FALLBACK and out["BMU"].value == 0.0
    stat = resolve_tax_rate(etrs, meta, TaxVariable.STATUTORY)
    assert stat["IRL"].value == 0.125 and stat["IRL"].source is RateSource.STATUTORY
    with pytest.raises(MissingMeta):
        resolve_tax_rate(etrs, meta, countries=["XXX"])


def test_filter_regression_sample():
    recs = [rec("USA", "A", 2000.0), rec("USA", "B", 500.0), rec("USA", "C", 2000.0), rec("USA", "D", 5000.0)]
    rates = {("USA", "A"): 0.1, ("USA", "B"): 0.1, ("USA", "C"): 0.7}
    kept = filter_regression_sample(recs, rates)
    assert [r.partner for r in kept] == ["A"]


def test_salary_model_and_wages():
    meta = {c: meta_row(c, gdp=g, population=p, salary=s) for c, g, p, s in
            [("A", 1e5, 1e7, 30000.0), ("B", 2e5, 1e7, 50000.0), ("C", 4e5, 2e7, 45000.0),
             ("D", 8e5, 2e7, 70000.0)]}
    model = fit_salary_model(meta)
    assert model.n == 4 and 0 <= model.r2 <= 1
    meta["E"] = meta_row("E", gdp=3e5, population=1e7, salary=None)
    panel = compute_wages([rec("USA", "A", 1.0, employees=100.0), rec("USA", "E", 1.0, employees=10.0),
                           rec("USA", "OTHER_ASIA", 1.0, employees=5.0)], meta, model, fallback_salary=20000.0)
    assert panel.wages[("USA", "A")] == pytest.approx(100 * 30000 / 1e6)
    assert panel.wages[("USA", "E")] == pytest.approx(10 * model.predict(meta["E"]) / 1e6)
    assert panel.wages[("USA", "OTHER_ASIA")] == pytest.approx(0.1)
    assert panel.imputed == {"E"}


def test_salary_model_needs_data():
    with pytest.raises(InsufficientData):
        fit_salary_model({"A": meta_row("A")})


def test_statutory_keeps_etr_for_labels_without_metadata():
    meta = {"IRL": meta_row("IRL", cit=0.125)}
    etrs = compute_etr([rec("USA", "IRL", 100.0, tax=5.0), rec("JPN", "OTHER_EUROPE", 10.0, tax=2.0)])
    out = resolve_tax_rate(etrs, meta, TaxVariable.STATUTORY)
    assert out["IRL"].value == 0.125
    assert out["OTHER_EUROPE"].value == pytest.approx(0.2) and out["OTHER_EUROPE"].source is RateSource.CBCR_POSITIVE
