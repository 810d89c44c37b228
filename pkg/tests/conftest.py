from __future__ import annotations

import math

import pytest

from shiftlab import pipeline
from shiftlab.config import load_config, with_overrides
from shiftlab.fixtures import toy_data_dir
from shiftlab.ingest import CountryMeta, DyadRecord, IncomeGroup, Subgroup


def rec(reporting, partner, profit, *, subgroup=Subgroup.POSITIVE, tax=None, employees=10.0,
        revenue=100.0, assets=50.0, n_firms=1, tax_paid=None):
    tax = 0.2 * profit if tax is None else tax
    return DyadRecord(reporting, partner, Subgroup(subgroup), n_firms, profit, tax,
                      tax if tax_paid is None else tax_paid, employees, revenue, assets)


def meta_row(code, gdp=1e5, population=1e7, salary=40000.0, cit=0.25, income=IncomeGroup.HIGH,
             region="Europe", tax_rev=2e4, cit_rev=3e3, bank=1e3):
    return CountryMeta(code, gdp, population, gdp * 1e6 / population, salary, cit, tax_rev, cit_rev,
                       IncomeGroup(income), region, bank)


@pytest.fixture(scope="session")
def toy_config(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_out")
    return with_overrides(load_config(toy_data_dir() / "run.cfg"), out=out)


@pytest.fixture(scope="session")
def toy_inputs(toy_config):
    return pipeline.load_inputs(toy_config)


@pytest.fixture(scope="session")
def toy_prep(toy_config, toy_inputs):
    return pipeline.prepare(toy_config, toy_inputs)


@pytest.fixture(scope="session")
def toy_fit(toy_config, toy_prep):
    return pipeline.fit_rows(toy_config, pipeline.regression_rows(toy_prep))


def rel_close(a, b, tol):
    return abs(a - b) <= tol * max(abs(a), abs(b), math.ulp(1.0))
