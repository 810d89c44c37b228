"""Misalignment model: booked profits against a formulary allocation of total profits.

Shares are formed per dyad from global activity totals, so a country's
share is the sum over the dyads located in it. Foreign dyads in
jurisdictions taxing above ``tau_ref`` are taken as non-shifting and
their misalignment is set to zero before aggregation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Hashable, Mapping, Sequence

from .ingest import DyadRecord, format_number
from .shift import (
    DEFAULT_TAU_REF,
    TRL_COLUMNS,
    RedistributionWeights,
    ShiftRow,
    activity_from_records,
    apply_redistribution,
    build_shift_rows,
    redistribution_shares,
)


@dataclass(frozen=True)
class MisalignmentRow:
    reporting: str
    partner: str
    pi: float
    p_hat: float
    s_hat: float
    constrained: bool


def misalignment_theoretical(pi_total: float, r_shares: Mapping[Hashable, float]) -> dict[Hashable, float]:
    """``p_hat_i = R_i * sum(pi)``."""
    return {k: r * pi_total for k, r in r_shares.items()}


@dataclass
class MisalignmentResult:
    rows: list[MisalignmentRow]
    pi: dict[str, float]
    p_hat: dict[str, float]
    s_hat: dict[str, float]
    r_country: dict[str, float]
    delta_p: dict[str, float]
    constrained_dyads: dict[str, int]

    @property
    def total_s_hat(self) -> float:
        return math.fsum(self.s_hat.values())


def dyad_shares(
    dyads: Sequence[DyadRecord],
    wages: Mapping[tuple[str, str], float],
    weights: RedistributionWeights = RedistributionWeights(),
) -> dict[tuple[str, str], float]:
    """Formulary share of every dyad, against totals over all dyads."""
    return redistribution_shares(activity_from_records(dyads, wages, by="dyad"), weights)


def misalignment_shift(
    dyads: Sequence[DyadRecord],
    rates: Mapping[str, float],
    r_shares: Mapping[tuple[str, str], float],
    tau_ref: float = DEFAULT_TAU_REF,
    country_shares: Mapping[str, float] | None = None,
    constrain: bool = True,
) -> MisalignmentResult:
    """Dyad misalignment, country aggregation and redistribution.

    Parameters
    ----------
    dyads
        ALL-subgroup records; negative profits are kept.
    rates
        Partner tax rate used for the above-``tau_ref`` constraint.
    r_shares
        Share per dyad ``(reporting, partner)``, summing to one.
    country_shares
        Shares used to redistribute the country totals. Defaults to the sum
        of ``r_shares`` over each partner's dyads.
    constrain
        Disable to compute the pure misalignment model.
    """
    pi_total = math.fsum(d.profit for d in dyads)
    rows = []
    for d in dyads:
        p_hat = r_shares.get(d.dyad, 0.0) * pi_total
        rate = rates.get(d.partner, math.nan)
        constrained = constrain and not d.domestic and math.isfinite(rate) and rate > tau_ref
        if constrained:
            p_hat = d.profit
        rows.append(MisalignmentRow(d.reporting, d.partner, d.profit, p_hat, d.profit - p_hat, constrained))

    pi: dict[str, list[float]] = {}
    ph: dict[str, list[float]] = {}
    sh: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    for r in rows:
        pi.setdefault(r.partner, []).append(r.pi)
        ph.setdefault(r.partner, []).append(r.p_hat)
        sh.setdefault(r.partner, []).append(r.s_hat)
        counts[r.partner] = counts.get(r.partner, 0) + int(r.constrained)

    if country_shares is None:
        acc: dict[str, list[float]] = {}
        for key, v in r_shares.items():
            acc.setdefault(key[1], []).append(v)
        country_shares = {c: math.fsum(v) for c, v in acc.items()}
    s_hat = {c: math.fsum(v) for c, v in sh.items()}
    return MisalignmentResult(
        rows=rows,
        pi={c: math.fsum(v) for c, v in pi.items()},
        p_hat={c: math.fsum(v) for c, v in ph.items()},
        s_hat=s_hat,
        r_country=dict(country_shares),
        delta_p=apply_redistribution(s_hat, country_shares),
        constrained_dyads=counts,
    )


def misalignment_table(
    result: MisalignmentResult,
    total_rates: Mapping[str, float],
    foreign_rates: Mapping[str, float] | None = None,
    statutory_rates: Mapping[str, float] | None = None,
) -> list[ShiftRow]:
    rows = build_shift_rows(result.pi, result.p_hat, result.s_hat, result.r_country, result.delta_p,
                            total_rates, foreign_rates, statutory_rates)
    return [replace(r, extra=(("constrained_dyads", float(result.constrained_dyads.get(r.country, 0))),))
            for r in rows]


def write_misalign_csv(rows: Sequence[ShiftRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "pi", "p_hat", "s_hat", "r_share", "delta_p", *TRL_COLUMNS, "constrained_dyads"])
        for r in rows:
            n = int(dict(r.extra).get("constrained_dyads", 0))
            w.writerow([r.country, *(format_number(v) for v in
                        (r.pi, r.p_hat, r.s_hat, r.r_share, r.delta_p, r.trl_total_etr,
                         r.trl_foreign_etr, r.trl_statutory)), n])
