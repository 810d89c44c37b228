"""Log-linear model of domestic multinational activity for countries that do not report."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import InsufficientData
from ..ingest import CountryMeta

REGRESSORS = ("const", "ln_firms", "ln_gdp", "ln_population", "etr", "ln_bank_claims")


@dataclass(frozen=True)
class DomesticModel:
    employees_coef: tuple[float, ...]
    sales_coef: tuple[float, ...]
    r2_employees: float
    r2_sales: float
    n: int


def _row(m: CountryMeta, firms: float, etr: float) -> np.ndarray | None:
    if m.bank_claims is None or not m.bank_claims > 0 or not firms > 0 or not math.isfinite(etr):
        return None
    return np.array([1.0, math.log(firms), math.log(m.gdp), math.log(m.population), etr, math.log(m.bank_claims)])


def _ols(X, y):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return tuple(float(b) for b in beta), r2


def fit_domestic_model(
    meta: Mapping[str, CountryMeta],
    observed: Mapping[str, tuple[float, float]],
    expected_firms: Mapping[str, float],
    etrs: Mapping[str, float],
) -> DomesticModel:
    """OLS of ln(domestic employees) and ln(domestic sales) on country covariates.

    ``observed`` maps reporter countries to their domestic (employees,
    sales). Countries lacking a positive observation or any covariate are
    skipped.
    """
    rows, emp, sales = [], [], []
    for c in sorted(observed):
        e, s = observed[c]
        if c not in meta or not (e > 0 and s > 0):
            continue
        x = _row(meta[c], expected_firms.get(c, math.nan), etrs.get(c, math.nan))
        if x is None:
            continue
        rows.append(x)
        emp.append(math.log(e))
        sales.append(math.log(s))
    if len(rows) < len(REGRESSORS):
        raise InsufficientData(f"domestic model needs {len(REGRESSORS)} usable countries, got {len(rows)}")
    X = np.vstack(rows)
    be, r2e = _ols(X, np.array(emp))
    bs, r2s = _ols(X, np.array(sales))
    return DomesticModel(be, bs, r2e, r2s, len(rows))


def predict_domestic(model: DomesticModel, m: CountryMeta, firms: float, etr: float) -> tuple[float, float]:
    """(employees, sales) predicted for one country."""
    x = _row(m, firms, etr)
    if x is None:
        raise InsufficientData(f"missing covariates for {m.code}")
    return math.exp(float(x @ model.employees_coef)), math.exp(float(x @ model.sales_coef))
