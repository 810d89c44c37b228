"""Splitting aggregate partner categories and scaling incomplete reporters."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Mapping

from ..errors import ZeroEstimates
from ..ingest import DyadRecord, MONETARY_FIELDS, scale_record

DEFAULT_RATIO_CAP = 10.0


def disaggregate_category(category_total: float, member_estimates: Mapping[str, float]) -> dict[str, float]:
    """Allocate ``category_total`` across members in proportion to their estimates."""
    est = {c: float(v) for c, v in member_estimates.items()}
    if any(v < 0 or not math.isfinite(v) for v in est.values()):
        raise ValueError("member estimates must be finite and nonnegative")
    total = math.fsum(est.values())
    if not total > 0:
        raise ZeroEstimates("member estimates sum to zero")
    return {c: category_total * (v / total) for c, v in est.items()}


def disaggregate_record(
    rec: DyadRecord,
    employee_estimates: Mapping[str, float],
    sales_estimates: Mapping[str, float],
) -> list[DyadRecord]:
    """Split one aggregate-label record into member-country records.

    Employees follow the employee estimates; profits, taxes, revenue and
    assets follow the sales estimates. Firm counts are split by employees
    and rounded, so they need not add up.
    """
    emp_w = disaggregate_category(1.0, employee_estimates)
    sales_w = disaggregate_category(1.0, sales_estimates)
    members = sorted(set(emp_w) | set(sales_w))
    out = []
    for c in members:
        we, ws = emp_w.get(c, 0.0), sales_w.get(c, 0.0)
        monet = {f: getattr(rec, f) * ws for f in MONETARY_FIELDS}
        out.append(replace(rec, partner=c, employees=rec.employees * we,
                           n_firms=int(round(rec.n_firms * we)), **monet))
    return out


def completeness_ratio(
    estimated: Mapping[str, tuple[float, float]],
    reported: Mapping[str, tuple[float, float]],
    cap: float = DEFAULT_RATIO_CAP,
) -> dict[str, float]:
    """Scaling factor for each reporter: the smaller of estimated/reported employees and sales.

    The factor is floored at one and capped at ``cap``; a variable reported
    as zero but estimated positive counts as ``cap``, and one that is zero
    on both sides is ignored.
    """
    out = {}
    for c, (est_emp, est_sales) in estimated.items():
        rep_emp, rep_sales = reported.get(c, (0.0, 0.0))
        if rep_emp < 0 or rep_sales < 0:
            raise ValueError("reported values must be nonnegative")
        ratios = []
        for est, rep in ((est_emp, rep_emp), (est_sales, rep_sales)):
            if rep > 0:
                ratios.append(est / rep)
            elif est > 0:
                ratios.append(cap)
        r = min(ratios) if ratios else 1.0
        out[c] = min(max(r, 1.0), cap)
    return out


def scale_reporters(records, ratios: Mapping[str, float]) -> list[DyadRecord]:
    """Scale every record of a reporter by its completeness ratio."""
    return [scale_record(r, ratios.get(r.reporting, 1.0)) for r in records]
