"""Deterministic synthetic panel with planted log-model shifting.

Ten reporting countries file against 60 partner jurisdictions, eleven of
them low-tax hubs. Booked profits follow

    ln(pi) = c + 0.3 ln K + 0.5 ln W + 0.1 ln pop - 0.1 ln gdp_pc
             + 4.0 tau - 1.2 ln(0.002 + tau) + noise,

so the tax response falls on [0, 0.298] and every reporter covers all the
hubs. Three reporters file their Nordic partners under ``OTHER_EUROPE``,
and a few employee and revenue cells are blank, which gives the imputation
stage something to do. ``python -m shiftlab.fixtures DIR`` writes the files.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .ingest import CountryMeta, DyadRecord, IncomeGroup, Subgroup, write_cbcr, write_meta

PLANTED = {"etr": 4.0, "log_etr": -1.2, "offset": 0.002}
TOY_SEED = 20240611

REPORTERS = ("USA", "DEU", "FRA", "JPN", "GBR", "ITA", "ESP", "CAN", "AUS", "KOR")
HUBS = ("BMU", "IRL", "LUX", "NLD", "CHE", "CYM", "VGB", "HKG", "SGP", "JEY", "PRI")
NORDIC = ("SWE", "NOR", "DNK", "FIN")
OTHERS = (
    "BRA", "MEX", "IND", "CHN", "RUS", "ZAF", "ARG", "CHL", "COL", "PER", "POL", "CZE", "HUN",
    "ROU", "TUR", "EGY", "NGA", "KEN", "MAR", "THA", "MYS", "IDN", "PHL", "VNM", "PAK",
    *NORDIC, "AUT", "BEL", "PRT", "GRC", "NZL", "ISR", "SAU", "ARE", "URY", "SVN",
)
PARTNERS = REPORTERS + HUBS + OTHERS
GROUPED_REPORTERS = ("JPN", "KOR", "AUS")

REGIONS = {
    **dict.fromkeys(("USA", "CAN", "MEX", "BMU", "CYM", "VGB", "PRI"), "NORTH_AMERICA"),
    **dict.fromkeys(("BRA", "ARG", "CHL", "COL", "PER", "URY"), "SOUTH_AMERICA"),
    **dict.fromkeys(("JPN", "KOR", "AUS", "NZL", "CHN", "IND", "HKG", "SGP", "THA", "MYS", "IDN", "PHL",
                     "VNM", "PAK"), "ASIA_PACIFIC"),
    **dict.fromkeys(("ZAF", "EGY", "NGA", "KEN", "MAR"), "AFRICA"),
    **dict.fromkeys(("TUR", "ISR", "SAU", "ARE"), "MIDDLE_EAST"),
}


def _region(code: str) -> str:
    return REGIONS.get(code, "EUROPE")


def _income(gdp_pc: float) -> IncomeGroup:
    if gdp_pc < 1500:
        return IncomeGroup.LOW
    if gdp_pc < 5000:
        return IncomeGroup.LOWER_MIDDLE
    if gdp_pc < 13000:
        return IncomeGroup.UPPER_MIDDLE
    return IncomeGroup.HIGH


@dataclass
class ToyPanel:
    meta: dict[str, CountryMeta]
    all_records: list[DyadRecord]
    positive: list[DyadRecord]
    features: list[tuple[str, str, list[float]]]
    feature_names: tuple[str, ...]
    category_members: list[tuple[str, str, str]]
    firm_counts: dict[str, float]


def _r(x: float, digits: int = 3) -> float:
    return float(round(x, digits))


def generate_toy_panel(seed: int = TOY_SEED) -> ToyPanel:
    rng = np.random.default_rng(seed)
    meta: dict[str, CountryMeta] = {}
    rate: dict[str, float] = {}
    for code in PARTNERS:
        hub = code in HUBS
        pop = float(round(math.exp(rng.uniform(np.log(1e5), np.log(5e6))) if hub
                          else math.exp(rng.uniform(np.log(3e6), np.log(3e8)))))
        pc = math.exp(rng.uniform(np.log(40000), np.log(120000))) if hub or code in REPORTERS \
            else math.exp(rng.uniform(np.log(1200), np.log(60000)))
        gdp = _r(pop * pc / 1e6)
        salary = _r(0.35 * (gdp * 1e6 / pop) * math.exp(rng.normal(0, 0.1)), 0)
        if rng.random() < 0.15 and code not in REPORTERS:
            salary = None
        if hub:
            rate[code] = float(np.exp(rng.uniform(np.log(0.0005), np.log(0.06))))
            cit = _r(min(0.125, rate[code] * 2 + rng.uniform(0, 0.05)))
        else:
            rate[code] = float(rng.uniform(0.08, 0.32))
            cit = _r(min(0.35, rate[code] + rng.uniform(0.0, 0.06)))
        tax_rev = _r(gdp * rng.uniform(0.15, 0.35))
        meta[code] = CountryMeta(
            code=code, gdp=gdp, population=pop, gdp_pc=_r(gdp * 1e6 / pop, 2), avg_salary=salary,
            statutory_cit=cit, total_tax_revenue=tax_rev, cit_revenue=_r(tax_rev * rng.uniform(0.05, 0.2)),
            income_group=_income(gdp * 1e6 / pop), region=_region(code),
            bank_claims=_r(gdp * math.exp(rng.normal(-0.5, 0.4))),
        )

    reporter_scale = {c: math.exp(rng.normal(0, 0.4)) for c in REPORTERS}
    distance = {(a, b): (0.0 if a == b else math.exp(rng.uniform(np.log(300), np.log(15000))))
                for a in REPORTERS for b in PARTNERS}
    sal_fill = np.mean([m.avg_salary for m in meta.values() if m.avg_salary is not None])

    all_recs: list[DyadRecord] = []
    pos_recs: list[DyadRecord] = []
    features: list[tuple[str, str, list[float]]] = []
    for rep in REPORTERS:
        grouped = {}
        for par in PARTNERS:
            m = meta[par]
            domestic = rep == par
            d = distance[(rep, par)]
            ln_gdp = math.log(m.gdp)
            ln_emp = (0.55 * ln_gdp + 0.3 * math.log(meta[rep].gdp) - 0.35 * math.log(d + 300)
                      + math.log(reporter_scale[rep]) + (2.5 if domestic else 0.0) + rng.normal(0, 0.35))
            if par in HUBS:
                ln_emp -= 0.8
            ln_emp = max(ln_emp, 0.5)
            emp = math.exp(ln_emp)
            trade = ln_emp + rng.normal(0, 0.3)
            feat = [math.log(d + 1.0), ln_gdp, math.log(meta[rep].gdp), trade]
            features.append((rep, par, [_r(v, 4) if rng.random() > 0.15 else math.nan for v in feat]))

            salary = m.avg_salary if m.avg_salary is not None else sal_fill
            wages = emp * salary / 1e6
            assets = wages * math.exp(rng.normal(0.7, 0.5))
            revenue = wages * math.exp(rng.normal(1.5, 0.3))
            tau = float(np.clip(rate[par] + rng.normal(0, 0.01 if par not in HUBS else 0.002), 0.0, 0.45))
            ln_pi = (1.0 + 0.3 * math.log(assets) + 0.5 * math.log(wages) + 0.1 * math.log(m.population)
                     - 0.1 * math.log(m.gdp_pc) + PLANTED["etr"] * tau
                     + PLANTED["log_etr"] * math.log(PLANTED["offset"] + tau) + rng.normal(0, 0.3))
            pi = math.exp(ln_pi)
            firms = max(1, int(round(emp / 400)))
            pos = DyadRecord(rep, par, Subgroup.POSITIVE, firms, _r(pi), _r(tau * pi), _r(tau * pi * 0.9),
                             _r(emp, 0), _r(revenue), _r(assets))
            loss = pi * rng.uniform(0.02, 0.25)
            grow = 1 + rng.uniform(0.05, 0.3)
            emp_all = _r(emp * grow, 0)
            rev_all = _r(revenue * grow)
            if not domestic and par not in HUBS and rng.random() < 0.08:
                emp_all = math.nan
            if not domestic and par not in HUBS and rng.random() < 0.05:
                rev_all = math.nan
            alls = DyadRecord(rep, par, Subgroup.ALL, firms + int(rng.integers(0, 3)), _r(pi - loss),
                              _r(tau * pi), _r(tau * pi * 0.9), emp_all, rev_all, _r(assets * grow))
            if rep in GROUPED_REPORTERS and par in NORDIC:
                grouped[par] = (pos, alls)
                continue
            pos_recs.append(pos)
            all_recs.append(alls)
        if grouped:
            for sub, idx in ((Subgroup.POSITIVE, 0), (Subgroup.ALL, 1)):
                parts = [v[idx] for v in grouped.values()]
                agg = DyadRecord(
                    rep, "OTHER_EUROPE", sub, sum(p.n_firms for p in parts),
                    *(_r(math.fsum(getattr(p, f) for p in parts)) for f in
                      ("profit", "tax_accrued", "tax_paid", "employees", "unrelated_revenue", "tangible_assets")),
                )
                (pos_recs if sub is Subgroup.POSITIVE else all_recs).append(agg)
    members = [(rep, "OTHER_EUROPE", c) for rep in GROUPED_REPORTERS for c in NORDIC]
    firm_counts = {c: float(max(5, round(math.exp(0.6 * math.log(meta[c].gdp) + rng.normal(0, 0.2)) / 10)))
                   for c in PARTNERS}
    return ToyPanel(meta, all_recs, pos_recs, features, ("ln_distance", "ln_gdp_partner", "ln_gdp_reporter",
                                                         "ln_trade"), members, firm_counts)


RUN_CFG = """\
[inputs]
cbcr_all = cbcr_all.csv
cbcr_positive = cbcr_positive.csv
meta = meta.csv
dyad_features = dyad_features.csv
category_members = category_members.csv
firm_counts = firm_counts.csv

[model]
basis = log
offset = search
fixed_effects = false
interaction = false
reference_country = USA
cluster = partner

[tax]
variable = etr
method = WEIGHTED_MEAN
basis = ACCRUED
tau_ref = 0.25
min_etr = 0
max_etr = 0.5
min_profit = 1000

[redistribution]
weights = 0.25,0.25,0.5

[corrections]
china_factor = 2.0
firm_count_ratios =
apply_only_if_above_one = true

[sample]
min_ofcs = 8
sample_share = 0.49

[bootstrap]
B = 20
level = 0.95
unit = ROW

[gbm]
learning_rate = 0.2
l2_regularization = 125
min_samples_leaf = 20
max_bins = 255
max_iter = 50

[run]
seed = 7
out = out
"""


def write_toy_panel(directory: str | Path, seed: int = TOY_SEED) -> Path:
    """Write the panel and a ``run.cfg`` into ``directory``; returns the config path."""
    import csv

    from .ingest import format_number

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    p = generate_toy_panel(seed)
    write_cbcr(p.all_records, out / "cbcr_all.csv")
    write_cbcr(p.positive, out / "cbcr_positive.csv")
    write_meta(p.meta, out / "meta.csv")
    with open(out / "dyad_features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reporting", "partner", *p.feature_names])
        for rep, par, vals in p.features:
            w.writerow([rep, par, *(format_number(v) for v in vals)])
    with open(out / "category_members.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reporting", "category_label", "member_country"])
        w.writerows(p.category_members)
    with open(out / "firm_counts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "expected_firms"])
        for c, v in p.firm_counts.items():
            w.writerow([c, format_number(v)])
    cfg = out / "run.cfg"
    cfg.write_text(RUN_CFG, encoding="utf-8")
    return cfg


def toy_data_dir() -> Path:
    """Directory of the copy shipped with the package."""
    return Path(str(resources.files("shiftlab") / "data"))


if __name__ == "__main__":
    print(write_toy_panel(sys.argv[1] if len(sys.argv) > 1 else toy_data_dir()))
