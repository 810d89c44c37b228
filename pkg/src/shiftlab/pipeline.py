"""End-to-end stages shared by the command-line interface and the bootstrap."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import boot, hinesrice, misalign, regress, shift
from .config import RunConfig
from .errors import InsufficientData
from .etr import (
    EtrEstimate,
    EtrMethod,
    SalaryModel,
    TaxVariable,
    compute_etr,
    compute_wages,
    dyad_etrs,
    filter_regression_sample,
    fit_salary_model,
    resolve_tax_rate,
    write_etr_csv,
)
from .impute import allocate, domestic
from .impute.features import DyadFeatures, parse_category_members, parse_dyad_features, parse_firm_counts
from .impute.gbm import GbmModel, fit_gbm, permutation_importance, predict_gbm
from .ingest import (
    CorrectionsConfig,
    CountryMeta,
    DyadRecord,
    Subgroup,
    apply_corrections,
    format_number,
    is_aggregate,
    parse_cbcr,
    parse_meta,
    select_sample,
    write_cbcr,
)

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# inputs and shared preparation

@dataclass
class Inputs:
    all_records: list[DyadRecord]
    positive: list[DyadRecord]
    meta: dict[str, CountryMeta]
    features: DyadFeatures | None = None
    categories: dict[tuple[str, str], tuple[str, ...]] | None = None
    firm_counts: dict[str, float] | None = None


def load_inputs(cfg: RunConfig) -> Inputs:
    p = cfg.inputs
    return Inputs(
        all_records=parse_cbcr(p.cbcr_all, Subgroup.ALL),
        positive=parse_cbcr(p.cbcr_positive, Subgroup.POSITIVE),
        meta=parse_meta(p.meta),
        features=parse_dyad_features(p.dyad_features) if p.dyad_features else None,
        categories=parse_category_members(p.category_members) if p.category_members else None,
        firm_counts=parse_firm_counts(p.firm_counts) if p.firm_counts else None,
    )


@dataclass
class Prepared:
    """Corrected records, rates and wages that every stage uses."""

    all_records: list[DyadRecord]
    positive: list[DyadRecord]
    meta: dict[str, CountryMeta]
    etrs: list[EtrEstimate]
    country_rates: dict[str, EtrEstimate]
    foreign_rates: dict[str, float]
    statutory: dict[str, float]
    dyad_rates: dict[tuple[str, str], float]
    salary_model: SalaryModel | None
    wages_positive: dict[tuple[str, str], float]
    wages_all: dict[tuple[str, str], float]
    sample_reporters: set[str]
    regression_dyads: list[DyadRecord]

    @property
    def total_rates(self) -> dict[str, float]:
        return {c: e.value for c, e in self.country_rates.items()}


def _rates_for(records, etrs, meta, variable) -> dict[str, EtrEstimate]:
    countries = sorted({e.country for e in etrs} | ({r.partner for r in records} & set(meta)))
    return resolve_tax_rate(etrs, meta, variable, countries)


def fallback_salary(records: Sequence[DyadRecord], meta: Mapping[str, CountryMeta],
                    model: SalaryModel | None) -> float | None:
    """Employee-weighted mean salary over partners with metadata, for aggregate labels."""
    num = den = 0.0
    for r in records:
        m = meta.get(r.partner)
        if m is None or not r.employees > 0:
            continue
        s = m.avg_salary if m.avg_salary is not None else (model.predict(m) if model else math.nan)
        if math.isfinite(s):
            num += r.employees * s
            den += r.employees
    return num / den if den > 0 else None


def prepare(cfg: RunConfig, inputs: Inputs, all_records: Sequence[DyadRecord] | None = None) -> Prepared:
    corrections = CorrectionsConfig(dict(cfg.firm_count_ratios), cfg.china_factor, None,
                                    cfg.apply_only_if_above_one)
    all_recs = apply_corrections(all_records if all_records is not None else inputs.all_records, corrections)
    pos = apply_corrections(inputs.positive, corrections)
    meta = inputs.meta

    etrs = compute_etr(pos, cfg.etr_method, cfg.tax_basis)
    country = _rates_for(pos + all_recs, etrs, meta, cfg.tax_variable)
    foreign_est = compute_etr(pos, EtrMethod.FOREIGN_WEIGHTED_MEAN, cfg.tax_basis)
    foreign = {c: e.value for c, e in _rates_for(pos + all_recs, foreign_est, meta, TaxVariable.ETR).items()}
    statutory = {c: m.statutory_cit for c, m in meta.items()}

    raw = dyad_etrs(pos, cfg.tax_basis)
    dyad_rates = {}
    for r in pos:
        e = raw.get(r.dyad, math.nan)
        if cfg.tax_variable is TaxVariable.STATUTORY:
            est = country.get(r.partner)
            v = est.value if est is not None else math.nan
        elif math.isfinite(e) and 0 <= e <= 1:
            v = e
        else:
            est = country.get(r.partner)
            v = est.value if est is not None else math.nan
        dyad_rates[r.dyad] = v

    try:
        salary_model = fit_salary_model(meta)
    except InsufficientData:
        salary_model = None
    fb = fallback_salary(all_recs, meta, salary_model)
    wages_pos = compute_wages(pos, meta, salary_model, fb).wages
    wages_all = compute_wages(all_recs, meta, salary_model, fb).wages

    reporters = select_sample(all_recs, cfg.ofcs, cfg.min_ofcs)
    candidates = [r for r in pos if r.reporting in reporters]
    # the regression filter applies to the measured dyad ETR
    reg_rates = {k: (raw.get(k, math.nan) if cfg.tax_variable is TaxVariable.ETR else v)
                 for k, v in dyad_rates.items()}
    reg = filter_regression_sample(candidates, reg_rates, min_etr=cfg.min_etr, max_etr=cfg.max_etr,
                                   min_profit=cfg.min_profit)
    return Prepared(all_recs, pos, meta, etrs, country, foreign, statutory, dyad_rates, salary_model,
                    wages_pos, wages_all, reporters, reg)


# ----------------------------------------------------------------------------
# regression

def fe_spec(cfg: RunConfig) -> regress.FeSpec:
    return regress.FeSpec(
        fe_enabled=cfg.fixed_effects,
        interaction=regress.Interaction.WITH_TAX_TERM if cfg.interaction else regress.Interaction.NONE,
        reference_country=cfg.reference_country,
        target=cfg.interaction_target,
    )


@dataclass
class FitOutcome:
    fit: regress.FitResult
    search: regress.OffsetSearch | None
    rows: regress.RowData


def fit_rows(cfg: RunConfig, rows: regress.RowData, basis: regress.BasisKind | None = None,
             with_cov: bool = True) -> FitOutcome:
    kind = basis or cfg.basis
    fe = fe_spec(cfg)
    clusters = rows.partners if cfg.cluster == "partner" else rows.reporters
    if not with_cov:
        clusters = np.zeros(len(rows.keys))
    offset = 0.0
    if kind.uses_offset:
        explicit = cfg.offset if kind is cfg.basis and not cfg.offset_search else None
        offset = explicit if explicit is not None else regress.DEFAULT_OFFSETS.get(kind)
        if offset is None or (cfg.offset_search and kind is cfg.basis):
            search = regress.select_offset(rows, kind, fe, clusters=clusters)
            return FitOutcome(search.fit, search, rows)
    design = regress.checked_design(rows, regress.BasisSpec(kind, offset), fe)
    return FitOutcome(regress.fit_design(design, clusters), None, rows)


def regression_rows(prep: Prepared, dyads: Sequence[DyadRecord] | None = None) -> regress.RowData:
    return regress.collect_rows(prep.regression_dyads if dyads is None else dyads, prep.dyad_rates,
                                prep.wages_positive, prep.meta)


# ----------------------------------------------------------------------------
# shifting

@dataclass
class ShiftOutcome:
    rows: list[shift.ShiftRow]
    dyads: list[shift.DyadShift]
    total_shifted: float
    total_positive: float
    world_total: float
    bands: list[shift.GroupRow] = field(default_factory=list)
    band_detail: list[shift.GroupDetail] = field(default_factory=list)
    groups: dict[str, list[shift.GroupRow]] = field(default_factory=dict)


def run_shift(cfg: RunConfig, prep: Prepared, fit: regress.FitResult, tau_ref: float | None = None,
              aggregate: bool = True) -> ShiftOutcome:
    tau_ref = cfg.tau_ref if tau_ref is None else tau_ref
    dyads = shift.shift_dyads(prep.positive, prep.dyad_rates, fit, tau_ref)
    pi, ph, sh = shift.country_sums(dyads)
    activity = shift.activity_from_records(prep.all_records, prep.wages_all, by="partner")
    r = shift.redistribution_shares(activity, cfg.weights)
    delta = shift.apply_redistribution(sh, r)
    rows = shift.build_shift_rows(pi, ph, sh, r, delta, prep.total_rates, prep.foreign_rates, prep.statutory)
    pos_total = math.fsum(max(v, 0.0) for v in sh.values())
    out = ShiftOutcome(rows, dyads, math.fsum(sh.values()), pos_total,
                       shift.gross_up_world(pos_total, cfg.sample_share))
    if aggregate:
        out.bands, out.band_detail = shift.aggregate(rows, shift.GroupKey.ETR_BAND, band_rates=prep.foreign_rates)
        for key in (shift.GroupKey.INCOME_GROUP, shift.GroupKey.REGION):
            out.groups[key.value], _ = shift.aggregate(rows, key, shift.Denominator.TOTAL_TAX_REV, prep.meta,
                                                       skip_missing=True)
    return out


# ----------------------------------------------------------------------------
# imputation

@dataclass
class ImputeOutcome:
    records: list[DyadRecord]
    ratios: dict[str, float]
    totals: dict[str, tuple[float, float, float, float]]  # est emp, est sales, rep emp, rep sales
    models: dict[str, GbmModel]
    importance: dict[str, np.ndarray]
    domestic: dict[str, tuple[float, float]]
    domestic_model: domestic.DomesticModel | None


def run_impute(cfg: RunConfig, inputs: Inputs, importance_repeats: int = 10) -> ImputeOutcome:
    if inputs.features is None:
        raise InsufficientData("imputation needs [inputs] dyad_features")
    feats = inputs.features
    records = list(inputs.all_records)
    X_obs = feats.matrix([r.dyad for r in records])
    models, importance = {}, {}
    targets = {"employees": np.array([r.employees for r in records]),
               "revenue": np.array([r.unrelated_revenue for r in records])}
    labelled = np.array([not is_aggregate(r.partner) for r in records])
    for name, y in targets.items():
        keep = labelled & np.isfinite(y) & (y >= 0)
        yt = np.log1p(y[keep])
        models[name] = fit_gbm(X_obs[keep], yt, cfg.gbm)
        importance[name] = permutation_importance(models[name], X_obs[keep], yt, importance_repeats,
                                                  cfg.seed).mean

    def predict(name, dyads):
        if not dyads:
            return np.empty(0)
        return np.expm1(predict_gbm(models[name], feats.matrix(dyads))).clip(min=0.0)

    # fill missing employee / revenue cells
    filled = []
    miss_e = [r.dyad for r in records if math.isnan(r.employees)]
    miss_r = [r.dyad for r in records if math.isnan(r.unrelated_revenue)]
    pe = dict(zip(miss_e, predict("employees", miss_e)))
    pr = dict(zip(miss_r, predict("revenue", miss_r)))
    for r in records:
        changes = {}
        if r.dyad in pe:
            changes["employees"] = float(pe[r.dyad])
        if r.dyad in pr:
            changes["unrelated_revenue"] = float(pr[r.dyad])
        filled.append(replace(r, **changes) if changes else r)

    # split aggregate labels into member countries
    out: list[DyadRecord] = []
    position = {r.key: i for i, r in enumerate(filled)}
    for r in filled:
        members = (inputs.categories or {}).get((r.reporting, r.partner))
        if not members:
            out.append(r)
            continue
        dy = [(r.reporting, m) for m in members]
        emp = dict(zip(members, predict("employees", dy)))
        sales = dict(zip(members, predict("revenue", dy)))
        if math.fsum(emp.values()) <= 0 or math.fsum(sales.values()) <= 0:
            out.append(r)
            continue
        out.extend(allocate.disaggregate_record(r, emp, sales))
    # a member the reporter also lists directly is merged into one record
    merged: dict[tuple, DyadRecord] = {}
    for r in out:
        merged[r.key] = _merge(merged[r.key], r) if r.key in merged else r
    out = sorted(merged.values(), key=lambda r: (position.get(r.key, len(position)), r.key))

    # completeness: predicted activity over every dyad the features know vs what was reported
    by_rep: dict[str, list[tuple[str, str]]] = {}
    for d in feats.keys:
        by_rep.setdefault(d[0], []).append(d)
    totals, estimated, reported = {}, {}, {}
    for rep in sorted({r.reporting for r in records}):
        dy = by_rep.get(rep, [])
        ee = math.fsum(predict("employees", dy)) if dy else 0.0
        es = math.fsum(predict("revenue", dy)) if dy else 0.0
        re_ = math.fsum(r.employees for r in filled if r.reporting == rep and math.isfinite(r.employees))
        rs = math.fsum(r.unrelated_revenue for r in filled
                       if r.reporting == rep and math.isfinite(r.unrelated_revenue))
        if not dy:
            ee, es = re_, rs
        estimated[rep] = (ee, es)
        reported[rep] = (re_, rs)
        totals[rep] = (ee, es, re_, rs)
    ratios = allocate.completeness_ratio(estimated, reported)

    dom, dom_model = {}, None
    if inputs.firm_counts:
        etrs = compute_etr(inputs.positive, cfg.etr_method, cfg.tax_basis)
        rates = {c: e.value for c, e in _rates_for(inputs.positive, etrs, inputs.meta, TaxVariable.ETR).items()}
        observed = {r.reporting: (r.employees, r.unrelated_revenue) for r in filled if r.domestic}
        dom_model = domestic.fit_domestic_model(inputs.meta, observed, inputs.firm_counts, rates)
        for c in sorted(set(inputs.meta) - set(observed)):
            m = inputs.meta[c]
            try:
                dom[c] = domestic.predict_domestic(dom_model, m, inputs.firm_counts.get(c, math.nan),
                                                   rates.get(c, m.statutory_cit))
            except InsufficientData:
                continue
    return ImputeOutcome(out, ratios, totals, models, importance, dom, dom_model)


def _merge(a: DyadRecord, b: DyadRecord) -> DyadRecord:
    def add(x, y):
        if math.isnan(x):
            return y
        return x if math.isnan(y) else x + y
    return replace(a, n_firms=a.n_firms + b.n_firms, profit=a.profit + b.profit,
                   tax_accrued=add(a.tax_accrued, b.tax_accrued), tax_paid=add(a.tax_paid, b.tax_paid),
                   employees=add(a.employees, b.employees),
                   unrelated_revenue=add(a.unrelated_revenue, b.unrelated_revenue),
                   tangible_assets=add(a.tangible_assets, b.tangible_assets))


# ----------------------------------------------------------------------------
# misalignment

def run_misalign(cfg: RunConfig, prep: Prepared, tau_ref: float | None = None, constrain: bool = True,
                 impute: ImputeOutcome | None = None, records: Sequence[DyadRecord] | None = None
                 ) -> misalign.MisalignmentResult:
    tau_ref = cfg.tau_ref if tau_ref is None else tau_ref
    recs = list(prep.all_records if records is None else records)
    wages = prep.wages_all
    if impute is not None:
        recs = allocate.scale_reporters(impute.records, impute.ratios)
        fb = fallback_salary(recs, prep.meta, prep.salary_model)
        wages = compute_wages(recs, prep.meta, prep.salary_model, fb).wages
    shares = misalign.dyad_shares(recs, wages, cfg.weights)
    country_shares = None
    if impute is not None and impute.domestic:
        activity = shift.activity_from_records(recs, wages, by="partner")
        for c, (emp, sales) in impute.domestic.items():
            m = prep.meta[c]
            sal = m.avg_salary if m.avg_salary is not None else (
                prep.salary_model.predict(m) if prep.salary_model else 0.0)
            activity[c] = activity.get(c, shift.Activity()) + shift.Activity(emp, emp * sal / 1e6, sales, 0.0)
        country_shares = shift.redistribution_shares(activity, cfg.weights)
    return misalign.misalignment_shift(recs, prep.total_rates, shares, tau_ref, country_shares, constrain)


# ----------------------------------------------------------------------------
# bootstrap

def bootstrap_statistics(cfg: RunConfig, prep: Prepared, B: int | None = None,
                         threads: int | None = None) -> dict[str, boot.BootstrapResult]:
    """Resample regression dyads, refit and recompute total shifted profits."""
    B = cfg.bootstrap_b if B is None else B
    dyads = prep.regression_dyads
    clusters = [d.reporting for d in dyads]

    def pipeline(sample):
        rows = regression_rows(prep, sample)
        outcome = fit_rows(cfg, rows, with_cov=False)
        s = run_shift(cfg, prep, outcome.fit, aggregate=False)
        stats = {"total_shifted_positive": s.total_positive, "world_shifted": s.world_total,
                 "offset": outcome.fit.offset}
        for name in outcome.fit.basis.tax_columns:
            stats[f"coef[{name}]"] = outcome.fit.coefficient(name)
        return stats

    return boot.bootstrap(pipeline, dyads, B, cfg.seed, cfg.bootstrap_unit,
                          clusters if cfg.bootstrap_unit is boot.ResampleUnit.CLUSTER else None,
                          cfg.bootstrap_level, threads)


# ----------------------------------------------------------------------------
# report tables

def profit_per_employee(prep: Prepared) -> list[tuple[str, str, float, float, float, float]]:
    out = []
    for r in prep.positive:
        tau = prep.dyad_rates.get(r.dyad, math.nan)
        if not (r.employees > 0 and math.isfinite(tau)):
            continue
        out.append((r.reporting, r.partner, tau, r.profit, r.employees, r.profit * 1e6 / r.employees))
    return sorted(out, key=lambda t: (t[2], t[0], t[1]))


def loss_offset(prep: Prepared) -> list[tuple[str, float, float, float]]:
    """(country, P+, P_all, (P+ - P_all)/P+) per partner with positive P+."""
    pos: dict[str, list[float]] = {}
    allp: dict[str, list[float]] = {}
    for r in prep.positive:
        pos.setdefault(r.partner, []).append(r.profit)
    for r in prep.all_records:
        allp.setdefault(r.partner, []).append(r.profit)
    out = []
    for c in sorted(pos):
        p_plus = math.fsum(pos[c])
        p_all = math.fsum(allp.get(c, []))
        if p_plus > 0 and c in allp:
            out.append((c, p_plus, p_all, (p_plus - p_all) / p_plus))
    return out


def rows_to_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else format_number(v) for v in row])


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def clean(x):
    """JSON-safe float (non-finite becomes None)."""
    return None if x is None or not math.isfinite(x) else float(x)


# ----------------------------------------------------------------------------
# artifact writers per stage

def write_etr_stage(prep: Prepared, out: Path) -> list[str]:
    write_etr_csv(prep.etrs, out / "etr.csv")
    rows_to_csv(out / "rates.csv", ["country", "rate", "source", "foreign_rate", "statutory"],
                ((c, e.value, e.source.value, prep.foreign_rates.get(c, math.nan), prep.statutory.get(c, math.nan))
                 for c, e in sorted(prep.country_rates.items())))
    return ["etr.csv", "rates.csv"]


def write_fit_stage(outcome: FitOutcome, out: Path, cluster: str = "partner") -> list[str]:
    extra = {"t_star": outcome.search.offset if outcome.search else None,
             "dropped_rows": outcome.rows.dropped, "clusters": cluster}
    regress.write_fit_json(outcome.fit, out / "fit.json", **extra)
    names = ["fit.json"]
    if outcome.search is not None:
        rows_to_csv(out / "offset_search.csv", ["offset", "bic"],
                    ((float(t), clean(float(b)) if np.isfinite(b) else None)
                     for t, b in zip(outcome.search.grid, outcome.search.bic)))
        names.append("offset_search.csv")
    return names


def write_shift_stage(s: ShiftOutcome, out: Path) -> list[str]:
    shift.write_shift_csv(s.rows, out / "shift.csv")
    shift.write_groups_csv({"ETR_BAND": s.bands}, out / "bands.csv")
    shift.write_group_detail_csv(s.band_detail, out / "band_detail.csv")
    shift.write_groups_csv(s.groups, out / "groups.csv")
    write_json(out / "shift_summary.json", {
        "schema": "1", "total_shifted_net": clean(s.total_shifted), "total_shifted_positive": clean(s.total_positive),
        "world_shifted_positive": clean(s.world_total)})
    return ["shift.csv", "bands.csv", "band_detail.csv", "groups.csv", "shift_summary.json"]


def write_misalign_stage(res: misalign.MisalignmentResult, prep: Prepared, out: Path) -> list[str]:
    rows = misalign.misalignment_table(res, prep.total_rates, prep.foreign_rates, prep.statutory)
    misalign.write_misalign_csv(rows, out / "misalign.csv")
    return ["misalign.csv"]


def write_impute_stage(imp: ImputeOutcome, out: Path) -> list[str]:
    write_cbcr(imp.records, out / "imputed_cbcr.csv")
    rows_to_csv(out / "completeness.csv",
                ["reporting", "estimated_employees", "estimated_sales", "reported_employees", "reported_sales",
                 "ratio"],
                ((c, *imp.totals[c], imp.ratios[c]) for c in sorted(imp.ratios)))
    names = ["imputed_cbcr.csv", "completeness.csv"]
    for name, model in imp.models.items():
        model.dump(out / f"gbm_{name}.json")
        names.append(f"gbm_{name}.json")
    rows_to_csv(out / "importance.csv", ["target", "feature", "importance"],
                ((t, j, float(v)) for t, vals in imp.importance.items() for j, v in enumerate(vals)))
    names.append("importance.csv")
    if imp.domestic_model is not None:
        rows_to_csv(out / "domestic.csv", ["code", "employees", "sales"],
                    ((c, e, s) for c, (e, s) in sorted(imp.domestic.items())))
        names.append("domestic.csv")
    return names


def write_bootstrap_stage(results: Mapping[str, boot.BootstrapResult], out: Path) -> list[str]:
    boot.write_ci_csv(results, out / "ci.csv")
    return ["ci.csv"]


def write_report_stage(prep: Prepared, outcome: FitOutcome, out: Path) -> list[str]:
    regress.write_residuals_csv(outcome.fit, out / "residuals.csv")
    rows_to_csv(out / "profit_per_employee.csv",
                ["reporting", "partner", "etr", "profit", "employees", "profit_per_employee_usd"],
                profit_per_employee(prep))
    rows_to_csv(out / "loss_offset.csv", ["country", "profit_positive", "profit_all", "loss_offset_share"],
                loss_offset(prep))
    hinesrice.write_alpha_table(hinesrice.alpha_table(), out / "alpha_table.csv")
    return ["residuals.csv", "profit_per_employee.csv", "loss_offset.csv", "alpha_table.csv"]
