"""Effective tax rates, statutory fallback, wage construction and outlier filtering."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientData, MissingMeta, NoObservations
from .ingest import CountryMeta, DyadRecord, Subgroup, format_number

log = logging.getLogger(__name__)


class EtrMethod(str, Enum):
    WEIGHTED_MEAN = "WEIGHTED_MEAN"
    MEDIAN = "MEDIAN"
    FOREIGN_WEIGHTED_MEAN = "FOREIGN_WEIGHTED_MEAN"


class TaxBasis(str, Enum):
    ACCRUED = "ACCRUED"
    CASH = "CASH"


class RateSource(str, Enum):
    CBCR_POSITIVE = "CBCR_POSITIVE"
    STATUTORY_FALLBACK = "STATUTORY_FALLBACK"
    STATUTORY = "STATUTORY"  # statutory rate requested explicitly


class TaxVariable(str, Enum):
    ETR = "ETR"
    STATUTORY = "STATUTORY"


@dataclass(frozen=True)
class EtrEstimate:
    country: str
    value: float
    method: EtrMethod
    basis: TaxBasis
    source: RateSource = RateSource.CBCR_POSITIVE


def dyad_etr(rec: DyadRecord, basis: TaxBasis = TaxBasis.ACCRUED) -> float:
    """Tax over profit for one dyad; ``nan`` when profit is not positive or tax is missing."""
    tax = rec.tax_accrued if basis is TaxBasis.ACCRUED else rec.tax_paid
    if not rec.profit > 0 or math.isnan(tax):
        return math.nan
    return tax / rec.profit


def dyad_etrs(records: Iterable[DyadRecord], basis: TaxBasis = TaxBasis.ACCRUED) -> dict[tuple[str, str], float]:
    return {r.dyad: dyad_etr(r, basis) for r in records}


def _aggregate(pairs: list[tuple[float, float]], method: EtrMethod) -> float:
    # pairs of (etr, profit); all profits positive here
    if method is EtrMethod.MEDIAN:
        return float(np.median([e for e, _ in pairs]))
    etr = np.array([e for e, _ in pairs])
    w = np.array([p for _, p in pairs])
    return float(np.sum(etr * w) / np.sum(w))


def _require_positive(records: Sequence[DyadRecord]) -> None:
    if any(r.subgroup is not Subgroup.POSITIVE for r in records):
        raise ValueError("ETRs are computed from the POSITIVE subgroup only")


def _collect(records, method, basis) -> dict[str, list[tuple[float, float]]]:
    groups: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        if method is EtrMethod.FOREIGN_WEIGHTED_MEAN and r.domestic:
            continue
        e = dyad_etr(r, basis)
        if math.isnan(e):
            continue
        groups.setdefault(r.partner, []).append((e, r.profit))
    return groups


def compute_etr(
    records: Sequence[DyadRecord],
    method: EtrMethod | str = EtrMethod.WEIGHTED_MEAN,
    basis: TaxBasis | str = TaxBasis.ACCRUED,
) -> list[EtrEstimate]:
    """Per-partner ETRs from POSITIVE-subgroup dyads.

    The weighted mean is profit weighted, the foreign variant drops
    domestic dyads, and dyads with zero profit never enter. Partners with no
    usable dyad are simply absent from the output.
    """
    method, basis = EtrMethod(method), TaxBasis(basis)
    _require_positive(records)
    groups = _collect(records, method, basis)
    return [EtrEstimate(c, _aggregate(pairs, method), method, basis) for c, pairs in sorted(groups.items())]


def country_etr(records, country: str, method=EtrMethod.WEIGHTED_MEAN, basis=TaxBasis.ACCRUED) -> EtrEstimate:
    method, basis = EtrMethod(method), TaxBasis(basis)
    _require_positive(records)
    pairs = _collect((r for r in records if r.partner == country), method, basis)
    if country not in pairs:
        raise NoObservations(f"no usable POSITIVE dyads for {country}")
    return EtrEstimate(country, _aggregate(pairs[country], method), method, basis)


def resolve_tax_rate(
    etrs: Iterable[EtrEstimate],
    meta: Mapping[str, CountryMeta],
    variable: TaxVariable | str = TaxVariable.ETR,
    countries: Iterable[str] | None = None,
) -> dict[str, EtrEstimate]:
    """Rate per country: the CBCR ETR where measured, else the statutory rate.

    With ``variable=STATUTORY`` every country with metadata gets its
    statutory rate; aggregate labels, which have none, keep their ETR.
    ``countries`` defaults to every country with an ETR or metadata.
    """
    variable = TaxVariable(variable)
    by_country = {e.country: e for e in etrs}
    if countries is None:
        countries = sorted(set(by_country) | set(meta))
    template = next(iter(by_country.values()), None)
    method = template.method if template else EtrMethod.WEIGHTED_MEAN
    basis = template.basis if template else TaxBasis.ACCRUED
    out: dict[str, EtrEstimate] = {}
    for c in countries:
        if c in by_country and (variable is TaxVariable.ETR or c not in meta):
            out[c] = by_country[c]
            continue
        if c not in meta:
            raise MissingMeta(f"no metadata (statutory rate) for {c}")
        source = RateSource.STATUTORY if variable is TaxVariable.STATUTORY else RateSource.STATUTORY_FALLBACK
        out[c] = EtrEstimate(c, meta[c].statutory_cit, method, basis, source)
    return out


def filter_regression_sample(
    dyads: Sequence[DyadRecord],
    rates: Mapping[tuple[str, str], float],
    *,
    min_etr: float = 0.0,
    max_etr: float = 0.5,
    min_profit: float = 1000.0,
) -> list[DyadRecord]:
    """Drop dyads with ETR outside ``[min_etr, max_etr]`` or profit below ``min_profit``.

    Dyads without a defined ETR are dropped as well.
    """
    kept = []
    for d in dyads:
        e = rates.get(d.dyad, math.nan)
        if math.isnan(e) or e < min_etr or e > max_etr:
            continue
        if not d.profit >= min_profit:
            continue
        kept.append(d)
    return kept


# ----------------------------------------------------------------------------
# wages

@dataclass(frozen=True)
class SalaryModel:
    """ln(salary) = a + b ln(GDP) + c ln(population)."""

    coef: tuple[float, float, float]
    r2: float
    n: int

    def predict(self, m: CountryMeta) -> float:
        a, b, c = self.coef
        return math.exp(a + b * math.log(m.gdp) + c * math.log(m.population))


def fit_salary_model(meta: Mapping[str, CountryMeta]) -> SalaryModel:
    rows = [m for m in meta.values() if m.avg_salary is not None]
    if len(rows) < 3:
        raise InsufficientData(f"salary model needs at least 3 observed salaries, got {len(rows)}")
    X = np.column_stack([
        np.ones(len(rows)),
        np.log([m.gdp for m in rows]),
        np.log([m.population for m in rows]),
    ])
    y = np.log([m.avg_salary for m in rows])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return SalaryModel(tuple(float(b) for b in beta), r2, len(rows))


def salary_for(m: CountryMeta, model: SalaryModel | None) -> tuple[float, bool]:
    """(salary, imputed) for one country."""
    if m.avg_salary is not None:
        return m.avg_salary, False
    if model is None:
        return math.nan, True
    return model.predict(m), True


@dataclass
class WagePanel:
    wages: dict[tuple[str, str], float]
    salary_model: SalaryModel | None
    imputed: set[str] = field(default_factory=set)


def compute_wages(
    dyads: Iterable[DyadRecord],
    meta: Mapping[str, CountryMeta],
    salary_model: SalaryModel | None,
    fallback_salary: float | None = None,
) -> WagePanel:
    """Wages in USD millions: employees times the partner's average salary.

    ``fallback_salary`` is used for partners without metadata (aggregate
    labels); without it their wages are ``nan``.
    """
    wages: dict[tuple[str, str], float] = {}
    imputed: set[str] = set()
    cache: dict[str, float] = {}
    for d in dyads:
        if d.partner not in cache:
            if d.partner in meta:
                s, was_imputed = salary_for(meta[d.partner], salary_model)
                if was_imputed:
                    imputed.add(d.partner)
            else:
                s = math.nan if fallback_salary is None else fallback_salary
            cache[d.partner] = s
        wages[d.dyad] = d.employees * cache[d.partner] / 1e6
    return WagePanel(wages, salary_model, imputed)


def write_etr_csv(estimates: Iterable[EtrEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "method", "basis", "value", "source"])
        for e in estimates:
            w.writerow([e.country, e.method.value, e.basis.value, format_number(e.value), e.source.value])
