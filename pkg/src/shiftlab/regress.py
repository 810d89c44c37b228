"""Design matrices, OLS, clustered covariance and the offset search for tax-response models.

The response is ln(booked profit). Every basis shares the controls
``ln_assets``, ``ln_wages``, ``ln_population``, ``ln_gdp_pc`` and the linear
``etr`` term; the basis adds the nonlinear tax columns. The tax response of a
fit is the part of the linear predictor that depends on the rate, which is
what counterfactual profits and marginal effects are built from.

BIC uses the full Gaussian log-likelihood,
``n ln(rss/n) + k ln n + n (1 + ln 2 pi)``. The additive constant does not
change which offset or model minimises it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import DegenerateColumn, RankDeficient, SingleCluster
from .ingest import CountryMeta, DyadRecord, format_number

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


class BasisKind(str, Enum):
    LINEAR = "LINEAR"
    QUADRATIC = "QUADRATIC"
    LOG = "LOG"
    LOG_PLUS_QUAD = "LOG_PLUS_QUAD"
    INV1 = "INV1"
    INV2 = "INV2"
    INV3 = "INV3"
    COTH = "COTH"
    ETR_BANDS = "ETR_BANDS"

    @property
    def uses_offset(self) -> bool:
        return self in _OFFSET_KINDS


_OFFSET_KINDS = {BasisKind.LOG, BasisKind.LOG_PLUS_QUAD, BasisKind.INV1, BasisKind.INV2,
                 BasisKind.INV3, BasisKind.COTH}

# offsets used for the inverse-power and coth bases when no search is requested
DEFAULT_OFFSETS = {
    BasisKind.INV1: 0.0260,
    BasisKind.INV2: 0.0580,
    BasisKind.INV3: 0.0940,
    BasisKind.COTH: 0.0260,
}
DEFAULT_BANDS = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)

BASE_COLUMNS = ("const", "ln_assets", "ln_wages", "ln_population", "ln_gdp_pc")


def default_offset_grid() -> np.ndarray:
    """t = 0 followed by 400 geometrically spaced offsets in [1e-5, 1]."""
    return np.concatenate([[0.0], np.geomspace(1e-5, 1.0, 400)])


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind = BasisKind.LOG
    offset: float = 0.0
    bands: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        if self.offset < 0 or not math.isfinite(self.offset):
            raise ValueError(f"offset must be a nonnegative number, got {self.offset}")
        if self.kind is BasisKind.ETR_BANDS:
            bands = tuple(float(b) for b in (self.bands or DEFAULT_BANDS))
            if any(b2 <= b1 for b1, b2 in zip(bands, bands[1:])):
                raise ValueError("band cut points must be strictly increasing")
            object.__setattr__(self, "bands", bands)
        elif self.bands:
            raise ValueError("bands only apply to ETR_BANDS")

    def with_offset(self, t: float) -> "BasisSpec":
        return replace(self, offset=float(t))

    @property
    def tax_columns(self) -> tuple[str, ...]:
        k = self.kind
        if k is BasisKind.LINEAR:
            return ("etr",)
        if k is BasisKind.QUADRATIC:
            return ("etr", "etr_sq")
        if k is BasisKind.LOG:
            return ("etr", "log_etr")
        if k is BasisKind.LOG_PLUS_QUAD:
            return ("etr", "log_etr", "etr_sq")
        if k is BasisKind.COTH:
            return ("etr", "coth")
        if k is BasisKind.ETR_BANDS:
            return ("etr", *band_names(self.bands))
        return ("etr", k.value.lower())

    @property
    def primary(self) -> str:
        """Tax column that reporter interactions multiply by default."""
        return {
            BasisKind.LINEAR: "etr",
            BasisKind.QUADRATIC: "etr_sq",
            BasisKind.LOG: "log_etr",
            BasisKind.LOG_PLUS_QUAD: "log_etr",
            BasisKind.ETR_BANDS: "etr",
        }.get(self.kind, self.kind.value.lower())


def band_names(cuts: Sequence[float]) -> list[str]:
    pct = [f"{100 * c:g}" for c in cuts]
    names = [f"band[<{pct[0]}%]"]
    names += [f"band[{a}-{b}%]" for a, b in zip(pct, pct[1:])]
    names.append(f"band[>{pct[-1]}%]")
    return names


class Interaction(str, Enum):
    NONE = "NONE"
    WITH_TAX_TERM = "WITH_TAX_TERM"


@dataclass(frozen=True)
class FeSpec:
    """Reporter fixed effects and reporter-specific tax interactions.

    ``target`` names the tax column the interaction multiplies (for
    LOG_PLUS_QUAD either ``log_etr`` or ``etr_sq``); it defaults to the
    basis' primary column.
    """

    fe_enabled: bool = False
    interaction: Interaction = Interaction.NONE
    reference_country: str = "USA"
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "interaction", Interaction(self.interaction))
        if self.interaction is Interaction.WITH_TAX_TERM and not self.fe_enabled:
            raise ValueError("tax interactions require fixed effects")


# ----------------------------------------------------------------------------
# tax transforms

def tax_column(name: str, tau, offset: float, bands: Sequence[float] = ()) -> np.ndarray:
    """Value of a named tax column at rate(s) ``tau``."""
    tau = np.asarray(tau, dtype=float)
    x = offset + tau
    if name == "etr":
        return tau.copy()
    if name == "etr_sq":
        return tau ** 2
    if name == "log_etr":
        return np.log(x)
    if name in ("inv1", "inv2", "inv3"):
        return x ** -float(name[-1])
    if name == "coth":
        return 1.0 / np.tanh(x)
    if name.startswith("band["):
        i = band_names(bands).index(name)
        edges = [-np.inf, *bands, np.inf]
        return ((tau >= edges[i]) & (tau < edges[i + 1])).astype(float)
    raise KeyError(name)


def tax_column_derivative(name: str, tau, offset: float) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    x = offset + tau
    if name == "etr":
        return np.ones_like(tau)
    if name == "etr_sq":
        return 2.0 * tau
    if name == "log_etr":
        return 1.0 / x
    if name in ("inv1", "inv2", "inv3"):
        k = float(name[-1])
        return -k * x ** (-k - 1.0)
    if name == "coth":
        return -1.0 / np.sinh(x) ** 2
    if name.startswith("band["):
        return np.zeros_like(tau)
    raise KeyError(name)


# ----------------------------------------------------------------------------
# design

@dataclass
class RowData:
    """Rate-independent part of a design: the kept rows and their controls."""

    keys: list[tuple[str, str]]
    y: np.ndarray
    controls: np.ndarray  # ln_assets, ln_wages, ln_population, ln_gdp_pc
    tau: np.ndarray
    reporters: np.ndarray
    partners: np.ndarray
    dropped: int = 0


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    rows: RowData
    basis: BasisSpec
    fe: FeSpec
    reference: str | None = None
    fe_reporters: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]


def collect_rows(
    dyads: Iterable[DyadRecord],
    rates: Mapping[tuple[str, str], float],
    wages: Mapping[tuple[str, str], float],
    meta: Mapping[str, CountryMeta],
) -> RowData:
    """Keep dyads with positive profit, assets and wages and a known partner.

    Dropped rows are counted and logged, never silently kept.
    """
    keys, y, ctrl, tau, rep, par = [], [], [], [], [], []
    dropped = 0
    for d in dyads:
        w = wages.get(d.dyad, math.nan)
        r = rates.get(d.dyad, math.nan)
        m = meta.get(d.partner)
        if (m is None or not d.profit > 0 or not d.tangible_assets > 0 or not w > 0
                or not math.isfinite(r)):
            dropped += 1
            continue
        keys.append(d.dyad)
        y.append(math.log(d.profit))
        ctrl.append((math.log(d.tangible_assets), math.log(w), math.log(m.population), math.log(m.gdp_pc)))
        tau.append(r)
        rep.append(d.reporting)
        par.append(d.partner)
    if dropped:
        log.info("design: dropped %d dyads with nonpositive profit/assets/wages or no metadata", dropped)
    return RowData(keys, np.array(y), np.array(ctrl, dtype=float).reshape(-1, 4), np.array(tau),
                   np.array(rep, dtype=object), np.array(par, dtype=object), dropped)


def assemble(rows: RowData, basis: BasisSpec, fe: FeSpec = FeSpec()) -> Design:
    """Build the regression matrix for ``basis`` on already-collected rows."""
    n = len(rows.keys)
    tax_names = list(basis.tax_columns)
    if basis.kind.uses_offset and n and np.min(basis.offset + rows.tau) <= 0:
        raise ValueError(f"offset {basis.offset} + min rate must be positive")
    cols: list[np.ndarray] = []
    names: list[str] = []
    if basis.kind is not BasisKind.ETR_BANDS:
        # band indicators span the intercept
        cols.append(np.ones(n))
        names.append("const")
    for j, c in enumerate(BASE_COLUMNS[1:]):
        cols.append(rows.controls[:, j])
        names.append(c)
    tax_vals = {}
    for c in tax_names:
        tax_vals[c] = tax_column(c, rows.tau, basis.offset, basis.bands)
        cols.append(tax_vals[c])
        names.append(c)

    reference = None
    fe_reporters: list[str] = []
    if fe.fe_enabled:
        present = sorted(set(rows.reporters))
        reference = fe.reference_country
        if reference not in present:
            fallback = present[0] if present else None
            log.warning("reference country %s not among reporters; using %s", reference, fallback)
            reference = fallback
        fe_reporters = [r for r in present if r != reference]
        for r in fe_reporters:
            cols.append((rows.reporters == r).astype(float))
            names.append(f"fe[{r}]")
        if fe.interaction is Interaction.WITH_TAX_TERM:
            target = fe.target or basis.primary
            if target not in tax_vals:
                raise ValueError(f"interaction target {target!r} is not a column of {basis.kind.value}")
            for r in fe_reporters:
                cols.append(tax_vals[target] * (rows.reporters == r))
                names.append(f"tax:{r}")

    X = np.column_stack(cols) if cols else np.empty((n, 0))
    design = Design(X, rows.y, names, rows, basis, fe, reference, fe_reporters)
    _check_columns(design)
    return design


def _check_columns(design: Design) -> None:
    X = design.X
    if X.shape[0] == 0:
        return
    for j, name in enumerate(design.names):
        col = X[:, j]
        if name == "const":
            continue
        if name.startswith("band["):
            if not np.any(col):
                raise DegenerateColumn(f"no observations fall in {name}")
            continue
        if np.ptp(col) == 0:
            raise DegenerateColumn(f"column {name} has zero variance")


def checked_design(rows: RowData, basis: BasisSpec, fe: FeSpec = FeSpec()) -> Design:
    """``assemble`` followed by the rank check."""
    design = assemble(rows, basis, fe)
    _rank_check(design.X, design.names)
    return design


def build_design(dyads, rates, wages, meta, basis: BasisSpec, fe: FeSpec = FeSpec()) -> Design:
    """Regression matrix and response ln(profit) for a basis and fixed-effect spec."""
    return checked_design(collect_rows(dyads, rates, wages, meta), basis, fe)


# ----------------------------------------------------------------------------
# fitting

@dataclass
class FitResult:
    names: list[str]
    coef: np.ndarray
    n: int
    rss: float
    r2: float
    bic: float
    XtX_inv: np.ndarray
    X: np.ndarray = field(repr=False)
    resid: np.ndarray = field(repr=False)
    basis: BasisSpec | None = None
    fe: FeSpec = field(default_factory=FeSpec)
    reference: str | None = None
    cov: np.ndarray | None = None
    keys: list[tuple[str, str]] = field(default_factory=list, repr=False)
    tau: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def offset(self) -> float:
        return self.basis.offset if self.basis is not None else 0.0

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, (float(b) for b in self.coef)))

    def coefficient(self, name: str, default: float = 0.0) -> float:
        try:
            return float(self.coef[self.names.index(name)])
        except ValueError:
            return default

    @property
    def se(self) -> np.ndarray | None:
        return None if self.cov is None else np.sqrt(np.clip(np.diag(self.cov), 0, None))

    def to_dict(self) -> dict:
        se = self.se
        return {
            "schema": "1",
            "basis": self.basis.kind.value if self.basis else None,
            "offset": self.offset,
            "reference_country": self.reference,
            "coefficients": [
                {"name": nm, "value": float(b), "se": None if se is None else float(s)}
                for nm, b, s in zip(self.names, self.coef, se if se is not None else [None] * self.k)
            ],
            "n": self.n,
            "r2": self.r2,
            "bic": self.bic,
            "rss": self.rss,
        }


def _rank_check(X: np.ndarray, names: Sequence[str]) -> None:
    n, k = X.shape
    if n <= k:
        raise RankDeficient(f"{n} observations for {k} columns")
    _pivoted_qr(X, names)


def _pivoted_qr(X, names):
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    tol = RANK_RTOL * max(float(np.max(np.linalg.norm(X, axis=0))), np.finfo(float).tiny)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        dependent = [names[p] for p in piv[rank:]] if names is not None else list(piv[rank:])
        raise RankDeficient(f"design has rank {rank} < {X.shape[1]}; dependent columns: {dependent}")
    return Q, R, piv


def ols_fit(X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> FitResult:
    """Least squares through column-pivoted QR.

    Raises RankDeficient when n <= k or a pivot falls below
    ``1e-10 * max column norm``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if n <= k:
        raise RankDeficient(f"{n} observations for {k} columns")
    Q, R, piv = _pivoted_qr(X, names)
    beta_p = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k)
    beta[piv] = beta_p
    Rinv = linalg.solve_triangular(R, np.eye(k))
    inv_p = Rinv @ Rinv.T
    XtX_inv = np.empty((k, k))
    XtX_inv[np.ix_(piv, piv)] = inv_p

    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else -math.inf)
    bic = gaussian_bic(rss, n, k)
    return FitResult(names, beta, n, rss, r2, bic, XtX_inv, X, resid)


def gaussian_bic(rss: float, n: int, k: int) -> float:
    if rss <= 0:
        return -math.inf
    return n * math.log(rss / n) + k * math.log(n) + n * (1.0 + math.log(2.0 * math.pi))


def fit_design(design: Design, clusters: Sequence[Hashable] | None = None) -> FitResult:
    """OLS on a design; clusters default to the partner jurisdiction."""
    fit = ols_fit(design.X, design.y, design.names)
    fit.basis = design.basis
    fit.fe = design.fe
    fit.reference = design.reference
    fit.keys = list(design.rows.keys)
    fit.tau = design.rows.tau
    if clusters is None:
        clusters = design.rows.partners
    if len(set(clusters)) >= 2:
        fit.cov = clustered_cov(fit, clusters)
    return fit


def clustered_cov(fit: FitResult, clusters: Sequence[Hashable] | Mapping[int, Hashable]) -> np.ndarray:
    """CR1 sandwich covariance.

    ``(X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1`` times
    ``G/(G-1) * (n-1)/(n-k)``.
    """
    if isinstance(clusters, Mapping):
        clusters = [clusters[i] for i in range(fit.n)]
    clusters = list(clusters)
    if len(clusters) != fit.n:
        raise ValueError(f"{len(clusters)} cluster labels for {fit.n} rows")
    labels = {c: i for i, c in enumerate(dict.fromkeys(clusters))}
    G = len(labels)
    if G < 2:
        raise SingleCluster("clustered covariance needs at least two clusters")
    idx = np.fromiter((labels[c] for c in clusters), dtype=np.intp, count=fit.n)
    scores = fit.X * fit.resid[:, None]
    S = np.zeros((G, fit.k))
    np.add.at(S, idx, scores)
    meat = S.T @ S
    bread = fit.XtX_inv
    scale = G / (G - 1) * (fit.n - 1) / (fit.n - fit.k)
    cov = scale * bread @ meat @ bread
    return (cov + cov.T) / 2.0


# ----------------------------------------------------------------------------
# offset search

@dataclass
class OffsetSearch:
    offset: float
    fit: FitResult
    grid: np.ndarray
    bic: np.ndarray  # nan where the offset was infeasible


def select_offset(
    rows: RowData,
    kind: BasisKind | str,
    fe: FeSpec = FeSpec(),
    grid: Sequence[float] | None = None,
    clusters: Sequence[Hashable] | None = None,
) -> OffsetSearch:
    """Refit over a grid of offsets and keep the BIC minimiser.

    Ties go to the smaller offset. Offsets with ``t + min(rate) <= 0`` are
    skipped so every candidate is fitted on the same rows.
    """
    kind = BasisKind(kind)
    if not kind.uses_offset:
        raise ValueError(f"{kind.value} has no offset")
    grid = np.sort(np.asarray(default_offset_grid() if grid is None else grid, dtype=float))
    if grid.size == 0:
        raise ValueError("offset grid is empty")
    if np.any(grid < 0):
        raise ValueError("offsets must be nonnegative")
    tau_min = float(np.min(rows.tau)) if rows.tau.size else 0.0
    feasible = grid + tau_min > 0
    if not np.any(feasible):
        raise ValueError(f"no feasible offset in grid (min rate {tau_min})")
    skipped = int(np.sum(~feasible))
    if skipped:
        log.info("offset search: skipped %d infeasible offsets", skipped)

    probe = checked_design(rows, BasisSpec(kind, float(grid[feasible][0])), fe)
    n, k = probe.X.shape
    moving = [j for j, nm in enumerate(probe.names) if _offset_dependent(nm, probe)]
    fixed = [j for j in range(k) if j not in moving]
    # only the offset-dependent columns change, so partial out the rest once
    Qf, _ = np.linalg.qr(probe.X[:, fixed])
    y_r = probe.y - Qf @ (Qf.T @ probe.y)
    masks = {nm: (rows.reporters == nm[4:]).astype(float) for nm in probe.names if nm.startswith("tax:")}
    target = fe.target or BasisSpec(kind).primary

    def moving_columns(t):
        # n x len(moving) for scalar t, n x len(moving) x len(t) for an array of offsets
        tt = np.asarray(t, dtype=float)
        tau = rows.tau if tt.ndim == 0 else rows.tau[:, None]
        cols = [tax_column(target, tau, tt) * (masks[probe.names[j]] if tt.ndim == 0 else masks[probe.names[j]][:, None])
                if probe.names[j].startswith("tax:") else tax_column(probe.names[j], tau, tt)
                for j in moving]
        return np.stack(cols, axis=1)

    bics = np.full(grid.size, np.nan)
    idx = np.flatnonzero(feasible)
    if len(moving) == 1:
        # one moving column: every offset's fit is a scalar projection, done in blocks
        for start in range(0, idx.size, 64):
            block = idx[start:start + 64]
            Z = moving_columns(grid[block])[:, 0, :]
            Z_r = Z - Qf @ (Qf.T @ Z)
            zz = np.einsum("ij,ij->j", Z_r, Z_r)
            zy = Z_r.T @ y_r
            rss = float(y_r @ y_r) - np.where(zz > 0, zy * zy / np.where(zz > 0, zz, 1.0), 0.0)
            bics[block] = [gaussian_bic(max(float(r), 0.0), n, k) for r in rss]
    else:
        for i in idx:
            Z_r = moving_columns(float(grid[i]))
            Z_r = Z_r - Qf @ (Qf.T @ Z_r)
            c, *_ = np.linalg.lstsq(Z_r, y_r, rcond=None)
            e = y_r - Z_r @ c
            bics[i] = gaussian_bic(float(e @ e), n, k)
    # first minimiser in ascending grid order, so ties go to the smaller offset
    best_i = int(idx[np.argmin(bics[idx])])
    t_best = float(grid[best_i])
    fit = fit_design(checked_design(rows, BasisSpec(kind, t_best), fe), clusters)
    return OffsetSearch(t_best, fit, grid, bics)


def _offset_dependent(name: str, design: Design) -> bool:
    if name in ("log_etr", "inv1", "inv2", "inv3", "coth"):
        return True
    if name.startswith("tax:"):
        return (design.fe.target or design.basis.primary) in ("log_etr", "inv1", "inv2", "inv3", "coth")
    return False


# ----------------------------------------------------------------------------
# using a fit

def _interaction(fit: FitResult, reporter: str | None) -> tuple[str | None, float]:
    if fit.fe.interaction is not Interaction.WITH_TAX_TERM or reporter is None:
        return None, 0.0
    target = fit.fe.target or fit.basis.primary
    return target, fit.coefficient(f"tax:{reporter}", 0.0)


def tax_response(fit: FitResult, tau, reporter: str | None = None) -> np.ndarray:
    """Rate-dependent part of the linear predictor, with the reporter's interaction.

    Reporters without an interaction coefficient (the reference country, or
    reporters absent from the estimation sample) use the base coefficients.
    """
    basis = fit.basis
    tau = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau)
    for c in basis.tax_columns:
        total = total + fit.coefficient(c) * tax_column(c, tau, basis.offset, basis.bands)
    target, delta = _interaction(fit, reporter)
    if target is not None and delta:
        total = total + delta * tax_column(target, tau, basis.offset, basis.bands)
    return total


def marginal_effect(fit: FitResult, tau, reporter: str | None = None):
    """d ln(profit) / d rate at ``tau`` (band indicators contribute nothing)."""
    basis = fit.basis
    tau_arr = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau_arr)
    for c in basis.tax_columns:
        total = total + fit.coefficient(c) * tax_column_derivative(c, tau_arr, basis.offset)
    target, delta = _interaction(fit, reporter)
    if target is not None and delta:
        total = total + delta * tax_column_derivative(target, tau_arr, basis.offset)
    return float(total) if np.ndim(tau) == 0 else total


def fit_from_coefficients(basis: BasisSpec, coefficients: Mapping[str, float],
                          fe: FeSpec = FeSpec()) -> FitResult:
    """A FitResult carrying only externally supplied coefficients."""
    names = list(coefficients)
    k = len(names)
    return FitResult(names, np.array([coefficients[n] for n in names], dtype=float), 0, math.nan,
                     math.nan, math.nan, np.full((k, k), np.nan), np.empty((0, k)), np.empty(0),
                     basis=basis, fe=fe)


# ----------------------------------------------------------------------------
# artifacts

def write_fit_json(fit: FitResult, path: str | Path, **extra) -> None:
    payload = fit.to_dict()
    payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def residual_table(fit: FitResult) -> list[tuple[str, str, float, float, float]]:
    """(reporting, partner, etr, residual, cumulative residual) sorted by ETR."""
    order = sorted(range(fit.n), key=lambda i: (fit.tau[i], fit.keys[i]))
    out, cum = [], 0.0
    for i in order:
        cum += float(fit.resid[i])
        rep, par = fit.keys[i]
        out.append((rep, par, float(fit.tau[i]), float(fit.resid[i]), cum))
    return out


def write_residuals_csv(fit: FitResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reporting", "partner", "etr", "residual", "cumulative_residual"])
        for rep, par, tau, e, cum in residual_table(fit):
            w.writerow([rep, par, format_number(tau), format_number(e), format_number(cum)])
