"""Reading CBCR dyad tables and country metadata, data corrections and sample selection.

All monetary quantities are USD millions. Missing numeric cells are read as
``nan`` (an empty string in the CSV) and written back as empty strings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateDyad, EmptyOfcList, MalformedRow, SchemaMismatch


class Subgroup(str, Enum):
    ALL = "ALL"
    POSITIVE = "POSITIVE"


class IncomeGroup(str, Enum):
    LOW = "LOW"
    LOWER_MIDDLE = "LOWER_MIDDLE"
    UPPER_MIDDLE = "UPPER_MIDDLE"
    HIGH = "HIGH"


AGGREGATE_LABELS = frozenset({
    "OTHER_EUROPE",
    "OTHER_AMERICA",
    "OTHER_ASIA_OCEANIA",
    "OTHER_AFRICA",
    "OTHER_GROUPS",
})

# offshore financial centres used for sample selection
DEFAULT_OFCS = frozenset({
    "BMU", "IRL", "LUX", "NLD", "CHE", "CYM", "VGB", "HKG", "SGP", "JEY", "PRI",
})

CBCR_COLUMNS = (
    "reporting", "partner", "subgroup", "n_firms", "profit_usd_m", "tax_accrued_usd_m",
    "tax_paid_usd_m", "employees", "unrelated_revenue_usd_m", "tangible_assets_usd_m",
)
META_COLUMNS = (
    "code", "gdp_usd_m", "population", "gdp_pc_usd", "avg_salary_usd", "statutory_cit",
    "total_tax_rev_usd_m", "cit_rev_usd_m", "income_group", "region", "bank_claims_usd_m",
)

MONETARY_FIELDS = ("profit", "tax_accrued", "tax_paid", "unrelated_revenue", "tangible_assets")


def is_aggregate(code: str) -> bool:
    return code in AGGREGATE_LABELS


@dataclass(frozen=True)
class DyadRecord:
    """One (reporting country, partner jurisdiction, subgroup) row of CBCR financials."""

    reporting: str
    partner: str
    subgroup: Subgroup
    n_firms: int
    profit: float
    tax_accrued: float
    tax_paid: float
    employees: float
    unrelated_revenue: float
    tangible_assets: float

    @property
    def key(self) -> tuple[str, str, Subgroup]:
        return (self.reporting, self.partner, self.subgroup)

    @property
    def dyad(self) -> tuple[str, str]:
        return (self.reporting, self.partner)

    @property
    def domestic(self) -> bool:
        return self.reporting == self.partner


@dataclass(frozen=True)
class CountryMeta:
    code: str
    gdp: float
    population: float
    gdp_pc: float
    avg_salary: float | None
    statutory_cit: float
    total_tax_revenue: float | None
    cit_revenue: float | None
    income_group: IncomeGroup
    region: str
    bank_claims: float | None


@dataclass
class CorrectionsConfig:
    """Reporter-level scale factors for incomplete reporting.

    ``firm_count_ratios`` maps a reporting country to expected/observed firm
    counts. China is scaled by ``china_factor`` instead of its ratio, and when
    ``us_substitution`` is given all US-reported rows are replaced by it (the
    US ratio is then ignored).
    """

    firm_count_ratios: dict[str, float] = field(default_factory=dict)
    china_factor: float = 2.0
    us_substitution: Sequence[DyadRecord] | None = None
    apply_only_if_above_one: bool = True

    def __post_init__(self):
        bad = {c: r for c, r in self.firm_count_ratios.items() if not r > 0}
        if bad:
            raise ValueError(f"correction ratios must be positive: {bad}")
        if not self.china_factor > 0:
            raise ValueError("china_factor must be positive")

    def effective_ratio(self, country: str) -> float:
        if country == "CHN":
            r = self.china_factor
        elif country == "USA" and self.us_substitution is not None:
            return 1.0
        else:
            r = self.firm_count_ratios.get(country, 1.0)
        if self.apply_only_if_above_one and r <= 1.0:
            return 1.0
        return r

    def inverse(self) -> "CorrectionsConfig":
        """Config undoing this one (only exact when ``apply_only_if_above_one`` is false)."""
        return CorrectionsConfig(
            firm_count_ratios={c: 1.0 / r for c, r in self.firm_count_ratios.items()},
            china_factor=1.0 / self.china_factor,
            us_substitution=None,
            apply_only_if_above_one=self.apply_only_if_above_one,
        )


# ----------------------------------------------------------------------------
# parsing

def _cell_float(raw: str, line: int, column: str, *, required: bool = False) -> float:
    raw = raw.strip()
    if raw == "":
        if required:
            raise MalformedRow(line, column, "value required")
        return math.nan
    try:
        value = float(raw)
    except ValueError:
        raise MalformedRow(line, column, f"not a number: {raw!r}") from None
    if math.isinf(value):
        raise MalformedRow(line, column, "infinite value")
    return value


def _cell_optional(raw: str, line: int, column: str) -> float | None:
    value = _cell_float(raw, line, column)
    return None if math.isnan(value) else value


def _read_rows(path: str | Path, columns: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, expected header {','.join(columns)}")
        header = [h.strip() for h in header]
        if header and header[0].startswith("﻿"):
            header[0] = header[0][1:]
        if tuple(header) != tuple(columns):
            raise SchemaMismatch(
                f"{path}: header {','.join(header)!r} does not match {','.join(columns)!r}"
            )
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                col = columns[min(len(row), len(columns) - 1)]
                raise MalformedRow(line, col, f"expected {len(columns)} fields, got {len(row)}")
            yield line, row


def parse_cbcr(path: str | Path, expected_subgroup: Subgroup | str | None = None) -> list[DyadRecord]:
    """Read a ``cbcr.csv`` file.

    Parameters
    ----------
    path : path-like
        CSV with columns ``CBCR_COLUMNS`` in that exact order.
    expected_subgroup : Subgroup, optional
        When given, every row must carry this subgroup.

    Raises
    ------
    SchemaMismatch, MalformedRow, DuplicateDyad
    """
    if expected_subgroup is not None:
        expected_subgroup = Subgroup(expected_subgroup)
    records: list[DyadRecord] = []
    seen: dict[tuple, int] = {}
    for line, row in _read_rows(path, CBCR_COLUMNS):
        reporting, partner, subgroup_raw = (c.strip() for c in row[:3])
        if not reporting:
            raise MalformedRow(line, "reporting", "empty country code")
        if not partner:
            raise MalformedRow(line, "partner", "empty jurisdiction code")
        try:
            subgroup = Subgroup(subgroup_raw)
        except ValueError:
            raise MalformedRow(line, "subgroup", f"unknown subgroup {subgroup_raw!r}") from None
        if expected_subgroup is not None and subgroup is not expected_subgroup:
            raise MalformedRow(line, "subgroup", f"expected {expected_subgroup.value}, got {subgroup.value}")

        n_firms_raw = row[3].strip()
        if n_firms_raw == "":
            n_firms = 0
        else:
            try:
                n_firms = int(n_firms_raw)
            except ValueError:
                raise MalformedRow(line, "n_firms", f"not an integer: {n_firms_raw!r}") from None
        if n_firms < 0:
            raise MalformedRow(line, "n_firms", "negative firm count")

        profit = _cell_float(row[4], line, "profit_usd_m", required=True)
        tax_accrued = _cell_float(row[5], line, "tax_accrued_usd_m")
        tax_paid = _cell_float(row[6], line, "tax_paid_usd_m")
        employees = _cell_float(row[7], line, "employees")
        revenue = _cell_float(row[8], line, "unrelated_revenue_usd_m")
        assets = _cell_float(row[9], line, "tangible_assets_usd_m")

        if subgroup is Subgroup.POSITIVE and profit < 0:
            raise MalformedRow(line, "profit_usd_m", "negative profit in POSITIVE subgroup")
        if employees < 0:
            raise MalformedRow(line, "employees", "negative employee count")
        if assets < 0:
            raise MalformedRow(line, "tangible_assets_usd_m", "negative tangible assets")

        rec = DyadRecord(reporting, partner, subgroup, n_firms, profit, tax_accrued,
                         tax_paid, employees, revenue, assets)
        if rec.key in seen:
            raise DuplicateDyad(
                f"{path}: line {line} repeats {reporting},{partner},{subgroup.value} "
                f"(first seen on line {seen[rec.key]})"
            )
        seen[rec.key] = line
        records.append(rec)
    return records


def parse_meta(path: str | Path) -> dict[str, CountryMeta]:
    """Read ``meta.csv`` into a code-keyed table."""
    table: dict[str, CountryMeta] = {}
    for line, row in _read_rows(path, META_COLUMNS):
        code = row[0].strip()
        if not code:
            raise MalformedRow(line, "code", "empty country code")
        if code in table:
            raise MalformedRow(line, "code", f"duplicate country {code}")
        gdp = _cell_float(row[1], line, "gdp_usd_m", required=True)
        population = _cell_float(row[2], line, "population", required=True)
        if gdp <= 0:
            raise MalformedRow(line, "gdp_usd_m", "gdp must be positive")
        if population <= 0:
            raise MalformedRow(line, "population", "population must be positive")
        implied_pc = gdp * 1e6 / population
        gdp_pc = _cell_optional(row[3], line, "gdp_pc_usd")
        if gdp_pc is None:
            gdp_pc = implied_pc
        elif abs(gdp_pc - implied_pc) > 0.01 * implied_pc:
            raise MalformedRow(line, "gdp_pc_usd",
                               f"{gdp_pc} inconsistent with gdp/population = {implied_pc:.2f}")
        salary = _cell_optional(row[4], line, "avg_salary_usd")
        if salary is not None and salary <= 0:
            raise MalformedRow(line, "avg_salary_usd", "salary must be positive")
        cit = _cell_float(row[5], line, "statutory_cit", required=True)
        if not 0.0 <= cit <= 1.0:
            raise MalformedRow(line, "statutory_cit", f"rate {cit} outside [0, 1]")
        try:
            income_group = IncomeGroup(row[8].strip())
        except ValueError:
            raise MalformedRow(line, "income_group", f"unknown income group {row[8]!r}") from None
        table[code] = CountryMeta(
            code=code,
            gdp=gdp,
            population=population,
            gdp_pc=gdp_pc,
            avg_salary=salary,
            statutory_cit=cit,
            total_tax_revenue=_cell_optional(row[6], line, "total_tax_rev_usd_m"),
            cit_revenue=_cell_optional(row[7], line, "cit_rev_usd_m"),
            income_group=income_group,
            region=row[9].strip(),
            bank_claims=_cell_optional(row[10], line, "bank_claims_usd_m"),
        )
    return table


# ----------------------------------------------------------------------------
# serialization

def format_number(x: float | int | None) -> str:
    """Shortest text that parses back to ``x``; integral floats print without a decimal part."""
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_cbcr(records: Iterable[DyadRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CBCR_COLUMNS)
        for r in records:
            writer.writerow([
                r.reporting, r.partner, r.subgroup.value, r.n_firms,
                *(format_number(getattr(r, f)) for f in
                  ("profit", "tax_accrued", "tax_paid", "employees", "unrelated_revenue",
                   "tangible_assets")),
            ])


def write_meta(meta: Mapping[str, CountryMeta], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(META_COLUMNS)
        for m in meta.values():
            writer.writerow([
                m.code, format_number(m.gdp), format_number(m.population), format_number(m.gdp_pc),
                format_number(m.avg_salary), format_number(m.statutory_cit),
                format_number(m.total_tax_revenue), format_number(m.cit_revenue),
                m.income_group.value, m.region, format_number(m.bank_claims),
            ])


# ----------------------------------------------------------------------------
# corrections and sample selection

def scale_record(rec: DyadRecord, factor: float) -> DyadRecord:
    """Scale monetary fields and employees; the firm count is left alone."""
    if factor == 1.0:
        return rec
    changes = {f: getattr(rec, f) * factor for f in MONETARY_FIELDS}
    changes["employees"] = rec.employees * factor
    return replace(rec, **changes)


def apply_corrections(records: Sequence[DyadRecord], cfg: CorrectionsConfig) -> list[DyadRecord]:
    """Apply firm-count ratios, the China factor and the optional US substitution."""
    out: list[DyadRecord] = []
    substituted = cfg.us_substitution is not None
    present_subgroups = {r.subgroup for r in records}
    for rec in records:
        if substituted and rec.reporting == "USA":
            continue
        out.append(scale_record(rec, cfg.effective_ratio(rec.reporting)))
    if substituted:
        # only the subgroups present in the input are replaced, so ALL and
        # POSITIVE tables can share one substitution file
        out.extend(r for r in cfg.us_substitution
                   if r.reporting == "USA" and r.subgroup in present_subgroups)
    return out


def select_sample(
    records: Iterable[DyadRecord],
    ofc_list: Iterable[str] = DEFAULT_OFCS,
    min_ofcs: int = 8,
) -> set[str]:
    """Reporting countries whose partner set covers at least ``min_ofcs`` OFCs."""
    if min_ofcs < 0:
        raise ValueError("min_ofcs must be nonnegative")
    ofcs = set(ofc_list)
    if min_ofcs > 0 and not ofcs:
        raise EmptyOfcList("min_ofcs > 0 requires a nonempty OFC list")
    covered: dict[str, set[str]] = {}
    for rec in records:
        partners = covered.setdefault(rec.reporting, set())
        if rec.partner in ofcs:
            partners.add(rec.partner)
    return {c for c, p in covered.items() if len(p) >= min_ofcs}
