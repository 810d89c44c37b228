"""Quadratic-cost shifting diagnostics: the cost scale alpha and the cost-to-shifted-profit ratio.

With shifting cost ``(alpha/2) S^2/p`` the first-order condition gives

    S/p = (1 - tau - lam) / (alpha (1 - tau)),

and the semi-elasticity ties ``alpha`` to the shadow price ``lam``. Two sign
conventions for that tie are supported:

``LambdaSign.POSITIVE``
    ``lam = 1/(alpha e)``. The residual
    ``1/alpha - 1/(alpha^2 e (1-tau)) - q`` (``q = s/(1-s)``) peaks at
    ``alpha = 2/(e(1-tau))`` with value ``e(1-tau)/4 - q``; for larger ``q``
    there is no real solution. The root taken is the one continuous with the
    ``s -> 0`` limit ``alpha = 1/(e(1-tau))``.
``LambdaSign.NEGATIVE``
    ``lam = -1/(alpha e)``. The residual is monotone decreasing and has a single
    positive root for every ``s`` in (0, 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

from .ingest import format_number

ALPHA_LOW = 1e-6
ALPHA_HIGH = 1e3
RESIDUAL_TOL = 1e-10


class LambdaSign(str, Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


@dataclass(frozen=True)
class HinesRiceParams:
    alpha: float
    lam: float
    semi_elasticity: float
    shifted_share: float
    tax_rate: float

    def __post_init__(self):
        if not 0 <= self.shifted_share < 1:
            raise ValueError("shifted_share must lie in [0, 1)")
        if not 0 <= self.tax_rate < 1:
            raise ValueError("tax_rate must lie in [0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def shifted_to_booked(self) -> float:
        """S/p implied by the first-order condition."""
        return (1 - self.tax_rate - self.lam) / (self.alpha * (1 - self.tax_rate))


@dataclass(frozen=True)
class AlphaSolution:
    alpha: float
    lam: float
    residual: float
    sign: LambdaSign

    solved = True


@dataclass(frozen=True)
class NoRealSolution:
    """No positive alpha satisfies the system.

    ``max_residual`` is the supremum of the residual over the search
    interval (negative here) and ``curve`` samples it on a log grid.
    """

    max_residual: float
    argmax_alpha: float
    curve: tuple[tuple[float, float], ...]
    sign: LambdaSign

    solved = False


def _check(e: float, s: float, tau: float) -> None:
    if not e > 0:
        raise ValueError("semi-elasticity magnitude must be positive")
    if not 0 <= s < 1:
        raise ValueError("shifted_share must lie in [0, 1)")
    if not 0 <= tau < 1:
        raise ValueError("tax rate must lie in [0, 1)")


def shadow_price(alpha: float, e: float, sign: LambdaSign = LambdaSign.POSITIVE) -> float:
    lam = 1.0 / (alpha * e)
    return lam if LambdaSign(sign) is LambdaSign.POSITIVE else -lam


def alpha_residual(alpha, e: float, s: float, tau: float, sign: LambdaSign = LambdaSign.POSITIVE):
    """First-order-condition S/p minus the target ``s/(1-s)``, as a function of alpha."""
    a = np.asarray(alpha, dtype=float)
    q = s / (1 - s)
    lam = shadow_price(a, e, sign)
    r = (1 - tau - lam) / (a * (1 - tau)) - q
    return float(r) if r.ndim == 0 else r


def _curve(e, s, tau, sign, n=61):
    grid = np.geomspace(ALPHA_LOW, ALPHA_HIGH, n)
    return tuple((float(a), float(r)) for a, r in zip(grid, alpha_residual(grid, e, s, tau, sign)))


def solve_alpha(e: float, s: float, tau: float,
                sign: LambdaSign | str = LambdaSign.POSITIVE) -> AlphaSolution | NoRealSolution:
    """Solve for alpha by bisection on a sign-changing bracket inside (1e-6, 1e3).

    ``e`` is the magnitude of the semi-elasticity. At ``s = 0`` under the
    positive convention the closed form ``1/(e(1-tau))`` is returned.
    """
    _check(e, s, tau)
    sign = LambdaSign(sign)
    f = lambda a: alpha_residual(a, e, s, tau, sign)  # noqa: E731

    if sign is LambdaSign.POSITIVE:
        if s == 0:
            alpha = 1.0 / (e * (1 - tau))
            return AlphaSolution(alpha, shadow_price(alpha, e, sign), f(alpha), sign)
        peak = min(2.0 / (e * (1 - tau)), ALPHA_HIGH)
        lo, hi = ALPHA_LOW, peak
    else:
        peak = ALPHA_LOW
        lo, hi = ALPHA_LOW, ALPHA_HIGH

    f_lo, f_hi = f(lo), f(hi)
    for a, r in ((hi, f_hi), (lo, f_lo)):
        if abs(r) < RESIDUAL_TOL:
            # tangent root at the residual's peak
            return AlphaSolution(a, shadow_price(a, e, sign), r, sign)
    if not (f_lo < 0 < f_hi or f_hi < 0 < f_lo):
        return NoRealSolution(max(f_lo, f_hi), peak if f_hi >= f_lo else lo, _curve(e, s, tau, sign), sign)
    alpha = bisect(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000)
    res = f(alpha)
    if abs(res) >= RESIDUAL_TOL:
        # the bracket shrank to adjacent floats without meeting the tolerance
        return NoRealSolution(res, alpha, _curve(e, s, tau, sign), sign)
    return AlphaSolution(alpha, shadow_price(alpha, e, sign), res, sign)


def cost_ratio(alpha: float, s: float) -> float:
    """Cost of shifting over profits shifted, ``(alpha/2) s/(1-s)``."""
    if not 0 <= s < 1:
        raise ValueError("shifted_share must lie in [0, 1)")
    return 0.5 * alpha * s / (1 - s)


GRID_E = (1.0, 4.0)
GRID_TAU = (0.0, 0.2, 0.4)
GRID_S = (0.95, 0.5, 0.25)


def alpha_table(
    semi_elasticities: Sequence[float] = GRID_E,
    tax_rates: Sequence[float] = GRID_TAU,
    shares: Sequence[float] = GRID_S,
) -> list[dict[str, object]]:
    """Alpha under both sign conventions for every grid cell."""
    rows = []
    for e, tau, s in product(semi_elasticities, tax_rates, shares):
        row: dict[str, object] = {"semi_elasticity": e, "tax_rate": tau, "shifted_share": s}
        for sign in LambdaSign:
            sol = solve_alpha(e, s, tau, sign)
            tag = sign.value.lower()
            if sol.solved:
                row.update({f"alpha_{tag}": sol.alpha, f"lambda_{tag}": sol.lam,
                            f"status_{tag}": "SOLVED", f"max_residual_{tag}": None,
                            f"cost_ratio_{tag}": cost_ratio(sol.alpha, s)})
            else:
                row.update({f"alpha_{tag}": None, f"lambda_{tag}": None,
                            f"status_{tag}": "NO_REAL_SOLUTION", f"max_residual_{tag}": sol.max_residual,
                            f"cost_ratio_{tag}": None})
        rows.append(row)
    return rows


ALPHA_TABLE_COLUMNS = (
    "semi_elasticity", "tax_rate", "shifted_share",
    *(f"{c}_{t}" for t in ("positive", "negative")
      for c in ("status", "alpha", "lambda", "max_residual", "cost_ratio")),
)


def write_alpha_table(rows: Sequence[dict[str, object]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALPHA_TABLE_COLUMNS)
        for r in rows:
            w.writerow([v if isinstance(v, str) else format_number(v) for v in (r[c] for c in ALPHA_TABLE_COLUMNS)])

