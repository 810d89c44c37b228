"""Counterfactual profits, shifted profits, formulary redistribution and tax revenue loss.

Sign conventions: ``s_hat > 0`` means profits shifted into a country, and a
negative ``trl`` is revenue lost by that country.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingDenominator, ZeroActivityTotal
from .ingest import CountryMeta, DyadRecord, format_number
from .regress import FitResult, tax_response

DEFAULT_TAU_REF = 0.25


def counterfactual_profit(pi, tau, fit: FitResult, reporter: str | None = None,
                          tau_ref: float = DEFAULT_TAU_REF):
    """Profit a jurisdiction would book if its rate were ``tau_ref``.

    ``p_hat = pi * exp(f(tau_ref) - f(tau))`` with ``f`` the fitted tax
    response; above ``tau_ref`` the semi-elasticity is taken as zero and
    ``p_hat = pi``.
    """
    pi_a = np.asarray(pi, dtype=float)
    tau_a = np.asarray(tau, dtype=float)
    below = tau_a <= tau_ref
    if fit.basis.kind.uses_offset and np.any(below & (tau_a + fit.offset <= 0)):
        raise ValueError("rate + offset must be positive")
    tau_eval = np.where(below, tau_a, tau_ref)
    gap = tax_response(fit, tau_ref, reporter) - tax_response(fit, tau_eval, reporter)
    p_hat = np.where(below, pi_a * np.exp(gap), pi_a)
    return float(p_hat) if p_hat.ndim == 0 else p_hat


def shifted_profit(pi, p_hat):
    return np.subtract(pi, p_hat) if np.ndim(pi) or np.ndim(p_hat) else pi - p_hat


def shifted_share(tau, fit: FitResult, reporter: str | None = None, tau_ref: float = DEFAULT_TAU_REF):
    """Fraction of booked profits shifted in, ``1 - p_hat/pi`` (independent of pi)."""
    return 1.0 - counterfactual_profit(1.0, tau, fit, reporter, tau_ref)


# ----------------------------------------------------------------------------
# redistribution

@dataclass(frozen=True)
class RedistributionWeights:
    employees: float = 0.25
    wages: float = 0.25
    revenue: float = 0.50
    assets: float = 0.0

    def __post_init__(self):
        vals = (self.employees, self.wages, self.revenue, self.assets)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError("redistribution weights must be nonnegative")
        if sum(vals) <= 0:
            raise ValueError("redistribution weights must not all be zero")

    def normalized(self) -> "RedistributionWeights":
        s = self.employees + self.wages + self.revenue + self.assets
        return RedistributionWeights(self.employees / s, self.wages / s, self.revenue / s, self.assets / s)

    def as_dict(self) -> dict[str, float]:
        return {"employees": self.employees, "wages": self.wages, "revenue": self.revenue,
                "assets": self.assets}


@dataclass(frozen=True)
class Activity:
    employees: float = 0.0
    wages: float = 0.0
    revenue: float = 0.0
    assets: float = 0.0

    def __add__(self, other: "Activity") -> "Activity":
        return Activity(self.employees + other.employees, self.wages + other.wages,
                        self.revenue + other.revenue, self.assets + other.assets)


def _clean(x: float) -> float:
    return 0.0 if x is None or not math.isfinite(x) else float(x)


def activity_from_records(
    records: Iterable[DyadRecord],
    wages: Mapping[tuple[str, str], float],
    by: str = "partner",
) -> dict[Hashable, Activity]:
    """Sum activity per partner (``by='partner'``) or per dyad (``by='dyad'``)."""
    out: dict[Hashable, Activity] = {}
    for r in records:
        key = r.partner if by == "partner" else r.dyad
        a = Activity(_clean(r.employees), _clean(wages.get(r.dyad, math.nan)),
                     _clean(r.unrelated_revenue), _clean(r.tangible_assets))
        out[key] = out[key] + a if key in out else a
    return out


def redistribution_shares(activity: Mapping[Hashable, Activity],
                          weights: RedistributionWeights = RedistributionWeights()) -> dict[Hashable, float]:
    """Formulary share R_i of each key; the shares sum to one.

    Weights are normalised first. Every activity variable with positive
    weight must have a positive total.
    """
    w = weights.normalized()
    fields = [(f, getattr(w, f)) for f in ("employees", "wages", "revenue", "assets") if getattr(w, f) > 0]
    totals = {}
    for f, _ in fields:
        totals[f] = math.fsum(max(_clean(getattr(a, f)), 0.0) for a in activity.values())
        if not totals[f] > 0:
            raise ZeroActivityTotal(f"total {f} is zero; cannot form redistribution shares")
    return {
        key: math.fsum(wf * max(_clean(getattr(a, f)), 0.0) / totals[f] for f, wf in fields)
        for key, a in activity.items()
    }


def apply_redistribution(s_hat: Mapping[Hashable, float], r: Mapping[Hashable, float]) -> dict[Hashable, float]:
    """``delta_p_i = -s_hat_i + (sum s_hat) * R_i`` over the union of keys."""
    total = math.fsum(s_hat.values())
    keys = list(dict.fromkeys([*s_hat, *r]))
    return {k: -s_hat.get(k, 0.0) + total * r.get(k, 0.0) for k in keys}


def gross_up_world(total_shifted: float, sample_share: float) -> float:
    """Scale a sample total to the world by the sample's share (e.g. of world GDP)."""
    if not 0 < sample_share <= 1:
        raise ValueError("sample_share must lie in (0, 1]")
    return total_shifted / sample_share


def tax_revenue_loss(delta_p, rate):
    rate_a = np.asarray(rate, dtype=float)
    if np.any((rate_a < 0) | (rate_a > 1)):
        raise ValueError("tax rate must lie in [0, 1]")
    out = np.multiply(delta_p, rate_a)
    return float(out) if np.ndim(out) == 0 else out


# ----------------------------------------------------------------------------
# country tables

@dataclass(frozen=True)
class DyadShift:
    reporting: str
    partner: str
    pi: float
    tau: float
    p_hat: float

    @property
    def s_hat(self) -> float:
        return self.pi - self.p_hat


def shift_dyads(
    dyads: Iterable[DyadRecord],
    rates: Mapping[tuple[str, str], float],
    fit: FitResult,
    tau_ref: float = DEFAULT_TAU_REF,
) -> list[DyadShift]:
    """Counterfactual profits for each dyad with positive profit and a known rate."""
    out = []
    for d in dyads:
        tau = rates.get(d.dyad, math.nan)
        if not d.profit > 0 or not math.isfinite(tau):
            continue
        p_hat = counterfactual_profit(d.profit, tau, fit, d.reporting, tau_ref)
        out.append(DyadShift(d.reporting, d.partner, d.profit, tau, p_hat))
    return out


@dataclass(frozen=True)
class ShiftRow:
    country: str
    pi: float
    p_hat: float
    s_hat: float
    r_share: float
    delta_p: float
    trl_total_etr: float
    trl_foreign_etr: float
    trl_statutory: float
    extra: tuple[tuple[str, float], ...] = ()

    @property
    def trl(self) -> float:
        return self.trl_total_etr


TRL_COLUMNS = ("trl_total_etr", "trl_foreign_etr", "trl_statutory")


def _rate_or_nan(table: Mapping[str, float] | None, c: str) -> float:
    if table is None:
        return math.nan
    v = table.get(c)
    return math.nan if v is None else float(v)


def build_shift_rows(
    pi: Mapping[str, float],
    p_hat: Mapping[str, float],
    s_hat: Mapping[str, float],
    r_shares: Mapping[str, float],
    delta_p: Mapping[str, float],
    total_rates: Mapping[str, float],
    foreign_rates: Mapping[str, float] | None = None,
    statutory_rates: Mapping[str, float] | None = None,
) -> list[ShiftRow]:
    """Assemble country rows; TRL columns are ``nan`` where a rate is unknown."""
    countries = sorted(set(pi) | set(s_hat) | set(r_shares) | set(delta_p))
    rows = []
    for c in countries:
        dp = delta_p.get(c, 0.0)
        trls = []
        for table in (total_rates, foreign_rates, statutory_rates):
            rate = _rate_or_nan(table, c)
            trls.append(dp * rate if math.isfinite(rate) else math.nan)
        rows.append(ShiftRow(c, pi.get(c, 0.0), p_hat.get(c, 0.0), s_hat.get(c, 0.0),
                             r_shares.get(c, 0.0), dp, *trls))
    return rows


def country_sums(dyad_shifts: Iterable[DyadShift]) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
    """Per-partner (pi, p_hat, s_hat) sums of dyad-level results."""
    pi: dict[str, list[float]] = {}
    ph: dict[str, list[float]] = {}
    for d in dyad_shifts:
        pi.setdefault(d.partner, []).append(d.pi)
        ph.setdefault(d.partner, []).append(d.p_hat)
    pi_s = {c: math.fsum(v) for c, v in pi.items()}
    ph_s = {c: math.fsum(v) for c, v in ph.items()}
    s_s = {c: math.fsum(a - b for a, b in zip(pi[c], ph[c])) for c in pi}
    return pi_s, ph_s, s_s


def write_shift_csv(rows: Sequence[ShiftRow], path: str | Path, extra_columns: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "pi", "p_hat", "s_hat", "r_share", "delta_p", *TRL_COLUMNS, *extra_columns])
        for r in rows:
            extra = dict(r.extra)
            w.writerow([r.country, *(format_number(v) for v in
                        (r.pi, r.p_hat, r.s_hat, r.r_share, r.delta_p, r.trl_total_etr,
                         r.trl_foreign_etr, r.trl_statutory)),
                        *(format_number(extra.get(c)) for c in extra_columns)])


# ----------------------------------------------------------------------------
# aggregation

class GroupKey(str, Enum):
    ETR_BAND = "ETR_BAND"
    INCOME_GROUP = "INCOME_GROUP"
    REGION = "REGION"


class Denominator(str, Enum):
    TOTAL_TAX_REV = "TOTAL_TAX_REV"
    CIT_REV = "CIT_REV"
    GDP = "GDP"
    NONE = "NONE"


DEFAULT_ETR_BANDS = (0.01, 0.05, 0.10, 0.15, 0.25)


def etr_band_label(rate: float, cuts: Sequence[float] = DEFAULT_ETR_BANDS) -> str:
    pct = [f"{100 * c:g}" for c in cuts]
    if not math.isfinite(rate):
        return "unknown"
    if rate < cuts[0]:
        return f"<{pct[0]}%"
    for (lo, hi), (a, b) in zip(zip(cuts, cuts[1:]), zip(pct, pct[1:])):
        if lo <= rate < hi:
            return f"{a}-{b}%"
    return f">{pct[-1]}%"


def band_labels(cuts: Sequence[float] = DEFAULT_ETR_BANDS) -> list[str]:
    pct = [f"{100 * c:g}" for c in cuts]
    return [f"<{pct[0]}%", *(f"{a}-{b}%" for a, b in zip(pct, pct[1:])), f">{pct[-1]}%"]


@dataclass(frozen=True)
class GroupRow:
    group: str
    n_countries: int
    s_hat_positive: float
    share_of_positive: float
    trl: float
    denominator: float
    ratio: float


@dataclass(frozen=True)
class GroupDetail:
    group: str
    country: str
    s_hat: float
    share_within_group: float


def _denominator(m: CountryMeta, which: Denominator) -> float | None:
    if which is Denominator.TOTAL_TAX_REV:
        return m.total_tax_revenue
    if which is Denominator.CIT_REV:
        return m.cit_revenue
    if which is Denominator.GDP:
        return m.gdp
    return None


def aggregate(
    rows: Sequence[ShiftRow],
    key: GroupKey | str,
    denominator: Denominator | str = Denominator.NONE,
    meta: Mapping[str, CountryMeta] | None = None,
    band_rates: Mapping[str, float] | None = None,
    cuts: Sequence[float] = DEFAULT_ETR_BANDS,
    trl_column: str = "trl_total_etr",
    skip_missing: bool = False,
) -> tuple[list[GroupRow], list[GroupDetail]]:
    """Group country rows by ETR band, income group or region.

    Band shares are shares of net positive country-level ``s_hat``. The ratio
    column is ``sum(trl) / sum(denominator)`` within a group. With
    ``skip_missing`` countries lacking the grouping metadata or the
    denominator are left out instead of raising.
    """
    key = GroupKey(key)
    denominator = Denominator(denominator)
    meta = meta or {}
    groups: dict[str, list[ShiftRow]] = {}
    for r in rows:
        if key is GroupKey.ETR_BAND:
            if band_rates is None:
                raise ValueError("ETR_BAND grouping needs band_rates")
            label = etr_band_label(_rate_or_nan(band_rates, r.country), cuts)
        else:
            m = meta.get(r.country)
            if m is None:
                if skip_missing:
                    continue
                raise MissingDenominator(f"no metadata to group {r.country}")
            label = m.income_group.value if key is GroupKey.INCOME_GROUP else m.region
        groups.setdefault(label, []).append(r)

    total_pos = math.fsum(max(r.s_hat, 0.0) for rs in groups.values() for r in rs)
    if key is GroupKey.ETR_BAND:
        order = [b for b in band_labels(cuts) if b in groups] + (["unknown"] if "unknown" in groups else [])
    else:
        order = sorted(groups)

    out, detail = [], []
    for label in order:
        members = groups[label]
        pos = math.fsum(max(r.s_hat, 0.0) for r in members)
        trl_vals, den_vals = [], []
        for r in members:
            if denominator is Denominator.NONE:
                trl_vals.append(getattr(r, trl_column))
                continue
            m = meta.get(r.country)
            d = _denominator(m, denominator) if m is not None else None
            if d is None or not math.isfinite(getattr(r, trl_column)):
                if skip_missing:
                    continue
                raise MissingDenominator(f"{r.country} has no {denominator.value} value")
            trl_vals.append(getattr(r, trl_column))
            den_vals.append(d)
        trl_sum = math.fsum(v for v in trl_vals if math.isfinite(v))
        den_sum = math.fsum(den_vals) if den_vals else math.nan
        ratio = trl_sum / den_sum if den_vals and den_sum != 0 else math.nan
        out.append(GroupRow(label, len(members), pos, pos / total_pos if total_pos > 0 else math.nan,
                            trl_sum, den_sum, ratio))
        for r in sorted(members, key=lambda r: (-r.s_hat, r.country)):
            share = max(r.s_hat, 0.0) / pos if pos > 0 else math.nan
            detail.append(GroupDetail(label, r.country, r.s_hat, share))
    return out, detail


def write_groups_csv(tables: Mapping[str, Sequence[GroupRow]], path: str | Path) -> None:
    """One file for several groupings; ``key`` names the grouping of each row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "group", "n_countries", "s_hat_positive", "share_of_positive", "trl", "denominator",
                    "ratio"])
        for key, groups in tables.items():
            for g in groups:
                w.writerow([key, g.group, g.n_countries, *(format_number(v) for v in
                            (g.s_hat_positive, g.share_of_positive, g.trl, g.denominator, g.ratio))])


def write_group_detail_csv(detail: Sequence[GroupDetail], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "country", "s_hat", "share_within_group"])
        for d in detail:
            w.writerow([d.group, d.country, format_number(d.s_hat), format_number(d.share_within_group)])
